use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::{DataError, Dataset};
use crate::seed;

/// Disjoint per-client sample index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Checks disjointness, coverage of `0..total`, and that no client is empty.
    pub fn validate(&self, total: usize) -> Result<(), String> {
        let mut seen = vec![false; total];
        for (c, idx) in self.client_indices.iter().enumerate() {
            if idx.is_empty() {
                return Err(format!("client {c} is empty"));
            }
            for &i in idx {
                if i >= total {
                    return Err(format!("index {i} out of range"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(format!("index {i} assigned twice"));
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(format!("index {i} unassigned")),
            None => Ok(()),
        }
    }
}

/// Non-IID split: for every class, proportions drawn from
/// Dirichlet(beta, ..., beta) over clients cut that class's shuffled indices.
/// Clients left empty take one sample from the currently largest client.
pub fn dirichlet_partition(
    ds: &Dataset,
    n_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<Partition, DataError> {
    if n_clients == 0 {
        return Err(DataError::InvalidArgument("n_clients must be >= 1".into()));
    }
    if ds.len() < n_clients {
        return Err(DataError::InvalidArgument(format!(
            "{} samples cannot cover {n_clients} clients",
            ds.len()
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(DataError::InvalidArgument(format!("bad beta {beta}")));
    }
    let mut rng = seed::rng_for(seed, &[seed::stream::PARTITION]);
    let gamma = Gamma::new(beta, 1.0).map_err(|e| DataError::InvalidArgument(e.to_string()))?;

    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..ds.n_classes() {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.label(i) as usize == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut props: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            props.fill(1.0 / n_clients as f64);
        }
        let m = members.len();
        let mut cum = 0.0;
        let mut start = 0usize;
        for (c, p) in props.iter().enumerate() {
            cum += p;
            let end = if c + 1 == n_clients {
                m
            } else {
                ((cum * m as f64).round() as usize).clamp(start, m)
            };
            clients[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let donor = (0..n_clients)
            .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
            .expect("n_clients >= 1");
        let moved = clients[donor].pop().expect("donor has >= 2 samples");
        clients[empty].push(moved);
    }
    clients.iter_mut().for_each(|c| c.sort_unstable());
    Ok(Partition {
        client_indices: clients,
    })
}
