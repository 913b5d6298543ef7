use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum Scheme {
    Iid,
    NonIid { classes_per_client: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_clients: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn iid(n_clients: usize, seed: u64) -> Self {
        PartitionPlan {
            n_clients,
            scheme: Scheme::Iid,
            seed,
        }
    }

    pub fn non_iid(n_clients: usize, seed: u64) -> Self {
        PartitionPlan {
            n_clients,
            scheme: Scheme::NonIid {
                classes_per_client: 2,
            },
            seed,
        }
    }
}

/// Splits `0..n` into `parts` consecutive chunks whose sizes differ by at
/// most one, larger chunks first.
fn even_chunks<T: Clone>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[at..at + len].to_vec());
        at += len;
    }
    out
}

/// Sample indices held by each client.
///
/// IID shuffles and deals equal shards. Non-IID assigns each client a run
/// of consecutive classes from concatenated random class permutations, then
/// splits every class pool evenly among the clients holding that class.
pub fn partition(labels: &[usize], plan: &PartitionPlan) -> Result<Vec<Vec<usize>>> {
    if plan.n_clients == 0 {
        return Err(Error::Config("partition needs at least one client".into()));
    }
    let mut rng = stream(plan.seed, "partition", &[]);
    match plan.scheme {
        Scheme::Iid => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut rng);
            Ok(even_chunks(&idx, plan.n_clients))
        }
        Scheme::NonIid { classes_per_client } => {
            let classes = labels.iter().max().map_or(0, |&m| m + 1);
            if classes_per_client == 0 || classes_per_client > classes.max(1) {
                return Err(Error::Config(format!(
                    "{classes_per_client} classes per client with {classes} classes present"
                )));
            }
            let mut slots = Vec::with_capacity(plan.n_clients * classes_per_client);
            while slots.len() < plan.n_clients * classes_per_client {
                let mut perm: Vec<usize> = (0..classes).collect();
                perm.shuffle(&mut rng);
                slots.extend(perm);
            }
            let held: Vec<&[usize]> = slots
                .chunks(classes_per_client)
                .take(plan.n_clients)
                .collect();
            let mut shards = vec![Vec::new(); plan.n_clients];
            for class in 0..classes {
                let mut pool: Vec<usize> =
                    (0..labels.len()).filter(|&i| labels[i] == class).collect();
                pool.shuffle(&mut rng);
                let holders: Vec<usize> = (0..plan.n_clients)
                    .filter(|&c| held[c].contains(&class))
                    .collect();
                if holders.is_empty() {
                    continue;
                }
                for (c, part) in holders.iter().zip(even_chunks(&pool, holders.len())) {
                    shards[*c].extend(part);
                }
            }
            Ok(shards)
        }
    }
}
