use std::io::Write;

use anyhow::Result;
use fedpoison_core::aggregation::aggregate_krum;
use fedpoison_core::attacks::compute_e;
use fedpoison_core::{ClientUpdate, ParamVector, SimRng};

use crate::config::OracleSpec;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Every `k`-subset of `0..n`.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Full pairwise Euclidean distance matrix.
pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|p| points.iter().map(|q| dist(p, q)).collect()).collect()
}

/// Minimum over every `k`-subset of `candidates` of the subset's distance
/// sum from `i`. Each sum is taken in ascending order so that geometrically
/// tied scores are also bitwise equal.
fn best_subset_sum(d: &[Vec<f64>], i: usize, candidates: &[usize], k: usize) -> f64 {
    subsets(candidates.len(), k)
        .iter()
        .map(|s| {
            let mut picked: Vec<f64> = s.iter().map(|&j| d[i][candidates[j]]).collect();
            picked.sort_by(f64::total_cmp);
            picked.iter().sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Krum scores by enumerating every neighbour subset of every client.
pub fn brute_force_scores(points: &[Vec<f64>], m: usize) -> Vec<f64> {
    let u = points.len();
    let d = distance_matrix(points);
    (0..u)
        .map(|i| {
            let others: Vec<usize> = (0..u).filter(|&j| j != i).collect();
            best_subset_sum(&d, i, &others, u - m - 2)
        })
        .collect()
}

/// Brute-force Krum choice; ties go to the lowest index.
pub fn brute_force_krum(points: &[Vec<f64>], m: usize) -> usize {
    let scores = brute_force_scores(points, m);
    (0..scores.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b })
}

/// `E` by the same enumeration restricted to benign peers.
pub fn brute_force_e(benign: &[Vec<f64>], k: usize) -> f64 {
    let d = distance_matrix(benign);
    (0..benign.len())
        .map(|i| {
            let others: Vec<usize> = (0..benign.len()).filter(|&j| j != i).collect();
            best_subset_sum(&d, i, &others, k)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Checks each random instance and prints `MATCH` or `MISMATCH` per line.
/// Returns whether every instance matched.
pub fn run_oracle(spec: &OracleSpec, out: &mut impl Write) -> Result<bool> {
    let mut rng = SimRng::seed_from(spec.seed);
    let mut all = true;
    for i in 0..spec.instances {
        let u = 3 + rng.below(spec.max_clients - 2);
        // Largest m with 2m + 2 < U.
        let m = rng.below((u - 3) / 2 + 1);
        let dim = 1 + rng.below(spec.max_dim);
        // Half the instances sit on an integer grid so that ties occur.
        let grid = rng.below(2) == 0;
        let points: Vec<Vec<f64>> = (0..u)
            .map(|_| {
                (0..dim)
                    .map(|_| if grid { rng.below(3) as f64 } else { rng.normal() })
                    .collect()
            })
            .collect();
        let updates: Vec<ClientUpdate> = points
            .iter()
            .enumerate()
            .map(|(id, p)| ClientUpdate::new(id, ParamVector::new(p.clone()).expect("finite"), 1.0 / u as f64))
            .collect();
        let outcome = aggregate_krum(&updates, m)?;
        let krum_ok = outcome.selected_id == Some(brute_force_krum(&points, m))
            && outcome.scores == Some(brute_force_scores(&points, m));

        // `E` over the benign tail, treating the first `m` as compromised.
        let e_ok = m == 0 || {
            let benign: Vec<ParamVector> = updates[m..].iter().map(|x| x.params.clone()).collect();
            let e = compute_e(&benign, m, u)?;
            let oracle = brute_force_e(&points[m..], u - m - 2);
            e == oracle
        };
        let ok = krum_ok && e_ok;
        all &= ok;
        writeln!(
            out,
            "instance {i} (U={u}, m={m}, dim={dim}): {}",
            if ok { "MATCH" } else { "MISMATCH" }
        )?;
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_instance_matches() {
        let mut buf = Vec::new();
        let spec = OracleSpec { instances: 200, ..OracleSpec::default() };
        assert!(run_oracle(&spec, &mut buf).unwrap());
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.ends_with("MATCH")).count(), 200);
        assert!(!text.contains("MISMATCH"));
    }

    #[test]
    fn brute_force_examples() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(brute_force_scores(&pts, 0), vec![1.0, 1.0, 1.0]);
        let spread = [vec![0.0], vec![1.0], vec![2.0], vec![10.0]];
        assert_eq!(brute_force_scores(&spread, 0), vec![3.0, 2.0, 3.0, 17.0]);
        assert_eq!(brute_force_krum(&pts, 0), 0);
        assert_eq!(brute_force_krum(&spread, 0), 1);
        assert_eq!(brute_force_e(&pts, 1), 1.0);
    }
}
