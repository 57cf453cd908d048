use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/languages.txt");

pub const ENGLISH: &str = "eng_Latn";

/// `xxx_Yyyy`: ISO 639-3 code, underscore, ISO 15924 script.
pub fn is_well_formed(tag: &str) -> bool {
    let b = tag.as_bytes();
    b.len() == 8
        && b[..3].iter().all(u8::is_ascii_lowercase)
        && b[3] == b'_'
        && b[4].is_ascii_uppercase()
        && b[5..].iter().all(u8::is_ascii_lowercase)
}

/// The set of language tags a codec accepts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageSet(BTreeSet<String>);

impl LanguageSet {
    pub fn bundled() -> &'static LanguageSet {
        static SET: OnceLock<LanguageSet> = OnceLock::new();
        SET.get_or_init(|| {
            LanguageSet::parse(BUNDLED).expect("bundled language list is well formed")
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut set = BTreeSet::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if !is_well_formed(line) {
                return Err(Error::UnknownLanguage(line.to_string()));
            }
            set.insert(line.to_string());
        }
        Ok(LanguageSet(set))
    }

    pub fn from_tags<I: IntoIterator<Item = S>, S: Into<String>>(tags: I) -> Result<Self> {
        let set: BTreeSet<String> = tags.into_iter().map(Into::into).collect();
        if let Some(bad) = set.iter().find(|t| !is_well_formed(t)) {
            return Err(Error::UnknownLanguage(bad.clone()));
        }
        Ok(LanguageSet(set))
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }

    pub fn check(&self, tag: &str) -> Result<()> {
        if is_well_formed(tag) && self.contains(tag) {
            Ok(())
        } else {
            Err(Error::UnknownLanguage(tag.to_string()))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_shape() {
        assert!(is_well_formed("eng_Latn"));
        assert!(is_well_formed("zho_Hant"));
        assert!(!is_well_formed("en_Latn"));
        assert!(!is_well_formed("eng-Latn"));
        assert!(!is_well_formed("eng_latn"));
    }

    #[test]
    fn bundled_set_covers_both_chinese_scripts() {
        let s = LanguageSet::bundled();
        assert!(s.contains("zho_Hans") && s.contains("zho_Hant") && s.contains(ENGLISH));
        assert!(s.check("xxx_Yyyy").is_err());
    }
}
