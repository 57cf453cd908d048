use serde::{Deserialize, Serialize};

/// Batch capacity: total concepts, or number of items.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Sentences(usize),
    Instances(usize),
}

/// Greedy first-fit grouping in arrival order; returns item indices per
/// batch. An item larger than a sentence budget gets a batch of its own.
pub fn batch_by_budget(sizes: &[usize], budget: Budget) -> Vec<Vec<usize>> {
    match budget {
        Budget::Instances(n) => {
            let n = n.max(1);
            (0..sizes.len())
                .collect::<Vec<_>>()
                .chunks(n)
                .map(<[usize]>::to_vec)
                .collect()
        }
        Budget::Sentences(cap) => {
            let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
            for (i, &s) in sizes.iter().enumerate() {
                match batches.iter_mut().find(|(used, _)| used + s <= cap) {
                    Some((used, items)) => {
                        *used += s;
                        items.push(i);
                    }
                    None => batches.push((s, vec![i])),
                }
            }
            batches.into_iter().map(|(_, b)| b).collect()
        }
    }
}
