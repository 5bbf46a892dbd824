//! OSPA error and its network and time averages.
//!
//! OSPA is evaluated on the planar positions only; velocities are ignored.

/// Minimum-cost assignment of every row to a distinct column for a
/// `rows × cols` cost matrix (row-major) with `rows ≤ cols`. Returns the
/// column of each row and the total cost.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> (Vec<usize>, f64) {
    assert!(rows <= cols, "hungarian needs rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    // potentials u (rows) and v (cols), 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum();
    (assignment, total)
}

/// OSPA distance of order `p` with cutoff `c` between two point sets.
pub fn ospa(estimates: &[[f64; 2]], truth: &[[f64; 2]], c: f64, p: f64) -> f64 {
    let (small, large) = if estimates.len() <= truth.len() {
        (estimates, truth)
    } else {
        (truth, estimates)
    };
    let (m, n) = (small.len(), large.len());
    if n == 0 {
        return 0.0;
    }
    let cp = c.powf(p);
    let mut cost = Vec::with_capacity(m * n);
    for a in small {
        for b in large {
            let d = (a[0] - b[0]).hypot(a[1] - b[1]);
            cost.push(d.min(c).powf(p));
        }
    }
    let (_, matched) = hungarian(&cost, m, n);
    ((matched + cp * (n - m) as f64) / n as f64).powf(1.0 / p)
}

/// Network and time averages of OSPA errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OspaSummary {
    /// N-OSPA(k): mean over sensors, then over runs.
    pub n_ospa: Vec<f64>,
    /// Standard error of N-OSPA(k) across runs (0 for a single run).
    pub stderr: Vec<f64>,
    /// Mean of N-OSPA over steps.
    pub tn_ospa: f64,
}

/// Aggregates `errors[run][sensor][step]`.
pub fn aggregate(errors: &[Vec<Vec<f64>>]) -> OspaSummary {
    let runs = errors.len();
    let steps = errors.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let per_run: Vec<Vec<f64>> = errors
        .iter()
        .map(|run| {
            (0..steps)
                .map(|k| run.iter().map(|s| s[k]).sum::<f64>() / run.len() as f64)
                .collect()
        })
        .collect();
    let mut n_ospa = Vec::with_capacity(steps);
    let mut stderr = Vec::with_capacity(steps);
    for k in 0..steps {
        let mean = per_run.iter().map(|r| r[k]).sum::<f64>() / runs as f64;
        let se = if runs > 1 {
            let var = per_run.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            (var / runs as f64).sqrt()
        } else {
            0.0
        };
        n_ospa.push(mean);
        stderr.push(se);
    }
    let tn_ospa = if steps == 0 {
        0.0
    } else {
        n_ospa.iter().sum::<f64>() / steps as f64
    };
    OspaSummary {
        n_ospa,
        stderr,
        tn_ospa,
    }
}

/// Average number of reals broadcast per sensor and step.
pub fn average_comm_cost(total_reals: u64, sensors: usize, steps: usize, runs: usize) -> f64 {
    total_reals as f64 / (sensors * steps * runs) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(estimates: &[[f64; 2]], truth: &[[f64; 2]], c: f64, p: f64) -> f64 {
        let (small, large) = if estimates.len() <= truth.len() {
            (estimates, truth)
        } else {
            (truth, estimates)
        };
        let n = large.len();
        if n == 0 {
            return 0.0;
        }
        fn search(small: &[[f64; 2]], large: &[[f64; 2]], i: usize, used: &mut Vec<bool>, c: f64, p: f64) -> f64 {
            if i == small.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..large.len() {
                if !used[j] {
                    used[j] = true;
                    let d = (small[i][0] - large[j][0]).hypot(small[i][1] - large[j][1]).min(c).powf(p);
                    best = best.min(d + search(small, large, i + 1, used, c, p));
                    used[j] = false;
                }
            }
            best
        }
        let matched = search(small, large, 0, &mut vec![false; n], c, p);
        ((matched + c.powf(p) * (n - small.len()) as f64) / n as f64).powf(1.0 / p)
    }

    #[test]
    fn ospa_examples() {
        let x = [[1.0, 2.0], [300.0, -4.0]];
        assert_eq!(ospa(&x, &x, 1000.0, 2.0), 0.0);
        assert_eq!(ospa(&[], &[[0.0, 0.0]], 1000.0, 2.0), 1000.0);
        assert_eq!(ospa(&[], &[], 1000.0, 2.0), 0.0);
        let v = ospa(&[[0.0, 0.0], [10.0, 0.0]], &[[0.0, 0.0], [0.0, 10.0]], 1000.0, 2.0);
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn hungarian_small_cases() {
        let (a, c) = hungarian(&[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0], 3, 3);
        assert_eq!(c, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
        let (a, c) = hungarian(&[7.0, 1.0, 9.0], 1, 3);
        assert_eq!((a, c), (vec![1], 1.0));
    }

    #[test]
    fn aggregate_examples() {
        let constant = vec![vec![vec![3.5; 10]; 4]; 3];
        let s = aggregate(&constant);
        assert!((s.tn_ospa - 3.5).abs() < 1e-15);
        assert!(s.stderr.iter().all(|&e| e == 0.0));
        let two = vec![vec![vec![2.0], vec![4.0]]];
        assert_eq!(aggregate(&two).n_ospa, vec![3.0]);
        let swapped = vec![vec![vec![4.0], vec![2.0]]];
        assert_eq!(aggregate(&swapped), aggregate(&two));
        let runs = vec![vec![vec![1.0]], vec![vec![3.0]]];
        assert!((aggregate(&runs).stderr[0] - 1.0).abs() < 1e-15);
    }

    fn arb_set(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
        proptest::collection::vec((-1500.0f64..1500.0, -1500.0f64..1500.0).prop_map(|(a, b)| [a, b]), 0..=max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn hungarian_matches_brute_force(a in arb_set(6), b in arb_set(6), p in 1.0f64..3.0) {
            let h = ospa(&a, &b, 1000.0, p);
            let bf = brute_force(&a, &b, 1000.0, p);
            prop_assert!((h - bf).abs() <= 1e-9);
            prop_assert!((h - ospa(&b, &a, 1000.0, p)).abs() <= 1e-9);
            prop_assert!(h <= 1000.0 + 1e-9);
        }

        #[test]
        fn spurious_estimate_never_decreases_cardinality_penalty(a in arb_set(5), b in arb_set(5)) {
            prop_assume!(a.len() >= b.len());
            let mut more = a.clone();
            more.push([1e6, 1e6]);
            prop_assert!(ospa(&more, &b, 1000.0, 2.0) >= ospa(&a, &b, 1000.0, 2.0) - 1e-9
                || b.is_empty());
        }
    }
}
