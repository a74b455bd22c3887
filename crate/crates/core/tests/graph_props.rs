use nlw_ldp::graph::{rate_function, w_in_tree, w_value, QuasipotentialMatrix, RateFunctionTable};
use proptest::prelude::*;

/// Every ordering of `0..l` with `i` last, built by recursion rather than by successor permutations.
fn chains_ending_at(l: usize, i: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..left.len() {
            let x = left.remove(k);
            prefix.push(x);
            grow(prefix, left, out);
            prefix.pop();
            left.insert(k, x);
        }
    }
    let mut out = Vec::new();
    let mut left: Vec<usize> = (0..l).filter(|&k| k != i).collect();
    grow(&mut Vec::new(), &mut left, &mut out);
    for c in &mut out {
        c.push(i);
    }
    out
}

fn naive_w(v: &[Vec<f64>], i: usize) -> f64 {
    chains_ending_at(v.len(), i)
        .iter()
        .map(|c| c.windows(2).map(|w| v[w[0]][w[1]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn fixture(max_l: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_l).prop_flat_map(|l| {
        proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, l), l).prop_map(|mut m| {
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            m
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn w_equals_naive_minimum(m in fixture(6)) {
        let v = QuasipotentialMatrix::new(m.clone()).unwrap();
        for i in 0..m.len() {
            prop_assert_eq!(w_value(i, &v).unwrap().value, naive_w(&m, i));
        }
    }

    #[test]
    fn rate_equals_naive_formula(m in fixture(6), k in 0usize..6) {
        let l = m.len();
        let k = k % l;
        let v = QuasipotentialMatrix::new(m.clone()).unwrap();
        let col: Vec<f64> = (0..l).map(|i| m[i][k]).collect();
        let w: Vec<f64> = (0..l).map(|i| naive_w(&m, i)).collect();
        let num = (0..l).map(|i| w[i] + col[i]).fold(f64::INFINITY, f64::min);
        let den = w.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(rate_function(&v, &col, None).unwrap().value, (num - den).max(0.0));
    }

    #[test]
    fn relabeling_permutes_w(m in fixture(6), seed in any::<u64>()) {
        let l = m.len();
        let mut perm: Vec<usize> = (0..l).collect();
        let mut s = seed;
        for i in (1..l).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Vec<f64>> = (0..l).map(|i| (0..l).map(|j| m[perm[i]][perm[j]]).collect()).collect();
        let a = QuasipotentialMatrix::new(m.clone()).unwrap();
        let b = QuasipotentialMatrix::new(permuted).unwrap();
        for i in 0..l {
            let wa = w_value(perm[i], &a).unwrap().value;
            let wb = w_value(i, &b).unwrap().value;
            prop_assert!((wa - wb).abs() <= 1e-12 * wa.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_shift_leaves_rate_unchanged(m in fixture(5), c in 0.0f64..3.0) {
        let l = m.len();
        let shifted: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..l).map(|j| if i == j { 0.0 } else { m[i][j] + c }).collect())
            .collect();
        let a = QuasipotentialMatrix::new(m.clone()).unwrap();
        let b = QuasipotentialMatrix::new(shifted).unwrap();
        let mask = vec![true; l];
        let ta = RateFunctionTable::build(&a, &mask, false).unwrap();
        let tb = RateFunctionTable::build(&b, &mask, false).unwrap();
        for i in 0..l {
            let expect = ta.w[i] + (l as f64 - 1.0) * c;
            prop_assert!((tb.w[i] - expect).abs() <= 1e-9 * expect.max(1.0));
        }
        // the rate at the points themselves shifts only off the minimizer
        let min_a = ta.w.iter().copied().fold(f64::INFINITY, f64::min);
        for i in 0..l {
            if ta.w[i] == min_a {
                prop_assert!(tb.rate[i] <= 1e-9);
            }
        }
    }

    #[test]
    fn in_tree_never_exceeds_chain(m in fixture(5)) {
        let v = QuasipotentialMatrix::new(m.clone()).unwrap();
        for i in 0..m.len() {
            prop_assert!(w_in_tree(i, &v).unwrap() <= w_value(i, &v).unwrap().value + 1e-12);
        }
    }

    #[test]
    fn closure_satisfies_triangle_inequality(m in fixture(6)) {
        let c = QuasipotentialMatrix::new(m).unwrap().closure();
        let l = c.size();
        for i in 0..l {
            for j in 0..l {
                for k in 0..l {
                    prop_assert!(c.get(i, j) <= c.get(i, k) + c.get(k, j) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_keeps_matrix(m in fixture(4)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        let mut m = m;
        if m.len() > 1 {
            m[0][1] = f64::INFINITY;
        }
        let v = QuasipotentialMatrix::new(m).unwrap();
        v.write_json(&p).unwrap();
        prop_assert_eq!(QuasipotentialMatrix::read_json(&p).unwrap(), v);
    }
}

#[test]
fn rate_vanishes_exactly_on_the_minimizing_wells() {
    // double-well shape: wells 0 and 2, saddle 1
    let b = 0.93;
    let v = QuasipotentialMatrix::new(vec![vec![0.0, b, 2.0 * b], vec![0.0, 0.0, 0.0], vec![2.0 * b, b, 0.0]]).unwrap();
    let t = RateFunctionTable::build(&v.closure(), &[true, false, true], true).unwrap();
    assert_eq!(t.rate, vec![0.0, b, 0.0]);
    assert_eq!(t.w, vec![b, 2.0 * b, b]);
}
