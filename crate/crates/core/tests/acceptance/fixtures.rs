use std::collections::HashMap;
use std::fs;
use std::net::TcpListener;

use concept_lm::codec::{
    serve, CodecInfo, CodecVocabulary, ConceptEmbedding, ConceptEncoder, SocketEncoder,
};
use concept_lm::data::{Normalizer, SegmentedDocument};
use concept_lm::diffusion::SamplerParams;
use concept_lm::evalharness::{
    alignment_pilot, emit_report, prefix_eval, DistanceSpace, EvalStack, ParallelPair,
    PrefixEvalConfig, Provenance, REPORT_CSV,
};
use concept_lm::generate::NextConceptSampler;
use concept_lm::nn::Mat;
use concept_lm::Error;

use crate::common::ensure;

const DIM: usize = 64;

/// Published per-language cosines used as targets.
const ALIGNMENT: [(&str, f64); 5] = [
    ("deu_Latn", 0.7642),
    ("fra_Latn", 0.8652),
    ("jpn_Jpan", 0.6030),
    ("kor_Hang", 0.5586),
    ("zho_Hans", 0.6699),
];

/// Published (L2, round-trip L2) per evaluation corpus.
const PREFIX: [(&str, f64, f64); 3] = [
    ("C4", 0.2551, 0.2411),
    ("MultiEurlex", 0.2063, 0.1972),
    ("Wiki40B", 0.2980, 0.2793),
];

/// Stands in for a pretrained encoder: a fixed table of vectors.
struct TableEncoder(HashMap<(String, String), Vec<f32>>);

impl ConceptEncoder for TableEncoder {
    fn dim(&self) -> usize {
        DIM
    }
    fn encode(&self, text: &str, lang: &str) -> concept_lm::Result<ConceptEmbedding> {
        let v = self
            .0
            .get(&(text.to_string(), lang.to_string()))
            .ok_or_else(|| {
                Error::InvalidSentence(format!("{text} ({lang}) not in fixture table"))
            })?;
        ConceptEmbedding::new(v.clone())
    }
    fn info(&self) -> CodecInfo {
        CodecInfo {
            kind: "fixture".into(),
            dim: DIM,
            seed: None,
        }
    }
}

/// `a·e_i + b·e_j`
fn two_axis(i: usize, a: f64, j: usize, b: f64) -> Vec<f32> {
    let mut v = vec![0.0f32; DIM];
    v[i] += a as f32;
    v[j] += b as f32;
    v
}

struct Lookup(HashMap<Vec<u64>, Vec<f64>>);

impl NextConceptSampler for Lookup {
    fn max_positions(&self) -> usize {
        128
    }
    fn next(&self, context: &Mat, _: &SamplerParams) -> concept_lm::Result<Vec<f64>> {
        let key: Vec<u64> = context.data().iter().map(|v| v.to_bits()).collect();
        Ok(self.0[&key].clone())
    }
}

fn csv_mean(csv: &str, scope: &str, lang: &str, metric: &str) -> Option<f64> {
    csv.lines().find_map(|l| {
        let f: Vec<&str> = l.split(',').collect();
        (f.len() == 5 && f[0] == scope && f[1] == lang && f[2] == metric)
            .then(|| f[4].parse().unwrap())
    })
}

pub fn check() -> Result<String, String> {
    let mut table = HashMap::new();
    let mut pairs = Vec::new();
    for (li, (lang, c)) in ALIGNMENT.iter().enumerate() {
        for k in 0..4 {
            let i = (li * 4 + k) % 32;
            let eng = format!("source sentence {li}-{k}");
            let tgt = format!("target sentence {li}-{k}");
            table.insert(
                (eng.clone(), "eng_Latn".to_string()),
                two_axis(i, 1.0, i, 0.0),
            );
            table.insert(
                (tgt.clone(), lang.to_string()),
                two_axis(i, *c, 32 + i, (1.0 - c * c).sqrt()),
            );
            pairs.push(ParallelPair {
                eng,
                tgt,
                lang: lang.to_string(),
            });
        }
    }

    // three sentences per document; each prediction lies at distance L from
    // the truth along the axis of a decoy sentence at distance R
    let mut datasets = Vec::new();
    let mut axis = 0;
    for (name, l2, rt) in PREFIX {
        let mut docs = Vec::new();
        let mut predictions = Vec::new();
        for d in 0..3 {
            let mut sentences = Vec::new();
            for s in 0..3 {
                let text = format!("{name} doc {d} sentence {s}");
                table.insert(
                    (text.clone(), "eng_Latn".into()),
                    two_axis(axis, 1.0, 32 + axis, 0.0),
                );
                table.insert(
                    (format!("{text} decoy"), "eng_Latn".into()),
                    two_axis(axis, 1.0, 32 + axis, rt),
                );
                if s > 0 {
                    predictions.push(two_axis(axis, 1.0, 32 + axis, l2));
                }
                sentences.push(text);
                axis += 1;
            }
            docs.push(SegmentedDocument {
                id: format!("{name}-{d}"),
                lang: "eng_Latn".into(),
                sentences,
            });
        }
        datasets.push((name, l2, rt, docs, predictions));
    }

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = TableEncoder(table.clone());
    std::thread::spawn(move || serve(listener, &server));
    let codec = SocketEncoder::connect(addr, DIM).map_err(|e| e.to_string())?;

    let prov = Provenance {
        config_hash: "fixture".into(),
        seed: 0,
        version: "fixture".into(),
    };
    let tmp = tempfile::tempdir().unwrap();
    let align = alignment_pilot(&pairs, &codec, 1000, &[]).map_err(|e| e.to_string())?;
    emit_report(&align.records, &prov, &tmp.path().join("align")).map_err(|e| e.to_string())?;
    let csv = fs::read_to_string(tmp.path().join("align").join(REPORT_CSV)).unwrap();
    for (lang, c) in ALIGNMENT {
        let got =
            csv_mean(&csv, "language", lang, "COSINE_ALIGN").ok_or(format!("no {lang} row"))?;
        ensure((got - c).abs() < 1e-4, || format!("{lang}: {got} vs {c}"))?;
    }

    let norm = Normalizer::identity(DIM);
    for (name, l2, rt, docs, predictions) in &datasets {
        let mut vocab = CodecVocabulary::new(DIM);
        let mut next = HashMap::new();
        let mut p = predictions.iter();
        for d in docs {
            for s in &d.sentences {
                vocab.add(&codec, s, "eng_Latn").unwrap();
                vocab
                    .add(&codec, &format!("{s} decoy"), "eng_Latn")
                    .unwrap();
            }
            let rows: Vec<Vec<f64>> = d
                .sentences
                .iter()
                .map(|s| codec.encode(s, "eng_Latn").unwrap().to_f64())
                .collect();
            for k in 1..rows.len() {
                let key: Vec<u64> = rows[..k].iter().flatten().map(|v| v.to_bits()).collect();
                next.insert(key, p.next().unwrap().iter().map(|&v| v as f64).collect());
            }
        }
        let sampler = Lookup(next);
        let stack = EvalStack {
            sampler: &sampler,
            normalizer: &norm,
            codec: &codec,
            vocab: &vocab,
            params: SamplerParams::default(),
        };
        let cfg = PrefixEvalConfig {
            min_sentences: 3,
            n_docs: 1000,
            space: DistanceSpace::Raw,
        };
        let out = prefix_eval(docs, &stack, &cfg).map_err(|e| e.to_string())?;
        let dir = tmp.path().join(name);
        emit_report(&out.records, &prov, &dir).map_err(|e| e.to_string())?;
        let csv = fs::read_to_string(dir.join(REPORT_CSV)).unwrap();
        ensure(
            csv.lines().nth(1) == Some("scope,lang,metric,n,mean"),
            || "report header".into(),
        )?;
        let got_l2 = csv_mean(&csv, "overall", "all", "L2").ok_or("no L2 row")?;
        let got_rt = csv_mean(&csv, "overall", "all", "RT_L2").ok_or("no RT_L2 row")?;
        ensure(
            (got_l2 - l2).abs() < 1e-4 && (got_rt - rt).abs() < 1e-4,
            || format!("{name}: L2 {got_l2} / {l2}, RT {got_rt} / {rt}"),
        )?;
    }
    Ok(format!(
        "{} alignment rows and {} prefix-eval rows reproduced through the socket adapter",
        ALIGNMENT.len(),
        PREFIX.len()
    ))
}
