use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChineseScript {
    Hans,
    Hant,
    Ambiguous,
}

/// Characters that occur in only one of the two Chinese scripts.
#[derive(Clone, Debug)]
pub struct ScriptSets {
    simplified: HashSet<char>,
    traditional: HashSet<char>,
}

impl ScriptSets {
    pub fn bundled() -> &'static ScriptSets {
        static SETS: OnceLock<ScriptSets> = OnceLock::new();
        SETS.get_or_init(|| {
            ScriptSets::parse(
                include_str!("../../data/zh_simplified_only.txt"),
                include_str!("../../data/zh_traditional_only.txt"),
            )
            .expect("bundled script sets are well formed")
        })
    }

    /// Parses two one-character-per-line files.
    pub fn parse(simplified: &str, traditional: &str) -> Result<Self> {
        let read = |text: &str| -> Result<HashSet<char>> {
            let mut set = HashSet::new();
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let mut it = line.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => {
                        set.insert(c);
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "expected one character per line, got `{line}`"
                        )))
                    }
                }
            }
            Ok(set)
        };
        let simplified = read(simplified)?;
        let traditional = read(traditional)?;
        if let Some(c) = simplified.intersection(&traditional).next() {
            return Err(Error::Config(format!(
                "`{c}` is listed as exclusive to both scripts"
            )));
        }
        Ok(ScriptSets {
            simplified,
            traditional,
        })
    }

    pub fn classify(&self, text: &str) -> ChineseScript {
        let (mut s, mut t) = (0usize, 0usize);
        for c in text.chars() {
            if self.simplified.contains(&c) {
                s += 1;
            } else if self.traditional.contains(&c) {
                t += 1;
            }
        }
        match s.cmp(&t) {
            std::cmp::Ordering::Greater => ChineseScript::Hans,
            std::cmp::Ordering::Less => ChineseScript::Hant,
            std::cmp::Ordering::Equal => ChineseScript::Ambiguous,
        }
    }
}

pub fn classify_chinese_script(text: &str) -> ChineseScript {
    ScriptSets::bundled().classify(text)
}

/// Replaces a bare or script-agnostic Chinese tag (`zho`, `zho_Hani`, ...)
/// with `zho_Hans` or `zho_Hant`; ambiguous text goes to `zho_Hans`. Other
/// tags pass through.
pub fn resolve_language(lang: &str, text: &str) -> String {
    let is_chinese =
        lang == "zho" || lang == "cmn" || lang.starts_with("zho_") || lang.starts_with("cmn_");
    if !is_chinese || lang == "zho_Hans" || lang == "zho_Hant" {
        return lang.to_string();
    }
    match classify_chinese_script(text) {
        ChineseScript::Hant => "zho_Hant".into(),
        ChineseScript::Hans | ChineseScript::Ambiguous => "zho_Hans".into(),
    }
}
