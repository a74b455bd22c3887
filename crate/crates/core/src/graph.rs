//! Chain graphs over the equilibria, the minima `W_l` and the rate function.
//!
//! Indices are zero based throughout: the chain `(m_1 -> ... -> m_l)` is a
//! permutation of `0..l` and `G_l(i)` holds those ending at `i`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serde adapters writing non-finite reals as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod inf_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct RealVisitor;

    impl Visitor<'_> for RealVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or \"inf\"")
        }

        fn visit_f64<E>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                _ => v.parse().map_err(|_| E::custom(format!("not a real: {v}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(RealVisitor)
    }

    /// Wrapper for use inside containers.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Real(pub f64);

    impl serde::Serialize for Real {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            serialize(&self.0, s)
        }
    }

    impl<'de> serde::Deserialize<'de> for Real {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            deserialize(d).map(Real)
        }
    }

    pub mod vec {
        use super::Real;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(x: &[f64], s: S) -> Result<S::Ok, S::Error> {
            x.iter().map(|&v| Real(v)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Real>::deserialize(d)?.into_iter().map(|r| r.0).collect())
        }
    }

    pub mod matrix {
        use super::Real;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(x: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            x.iter()
                .map(|row| row.iter().map(|&v| Real(v)).collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            Ok(Vec::<Vec<Real>>::deserialize(d)?
                .into_iter()
                .map(|row| row.into_iter().map(|r| r.0).collect())
                .collect())
        }
    }

    pub mod option {
        use super::Real;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            x.map(Real).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(Option::<Real>::deserialize(d)?.map(|r| r.0))
        }
    }
}

/// Largest `l` accepted by the factorial enumeration.
pub const MAX_CHAIN_SIZE: usize = 9;

/// Pairwise quasipotentials `V[i][j]` between the points of a finite set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasipotentialMatrix {
    #[serde(with = "inf_serde::matrix")]
    values: Vec<Vec<f64>>,
    /// Origin of each entry, e.g. an optimizer run id or `"fixture"`.
    provenance: Vec<Vec<String>>,
}

impl QuasipotentialMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let provenance = values.iter().map(|r| vec!["fixture".to_string(); r.len()]).collect();
        Self::with_provenance(values, provenance)
    }

    pub fn with_provenance(values: Vec<Vec<f64>>, provenance: Vec<Vec<String>>) -> Result<Self> {
        let l = values.len();
        if l == 0 {
            return Err(Error::InvalidArgument("empty quasipotential matrix".into()));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != l {
                return Err(Error::SizeMismatch { expected: l, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if v.is_nan() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!("V[{i}][{j}] = {v} must be >= 0")));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidArgument(format!("V[{i}][{i}] = {v} must be 0")));
                }
            }
        }
        if provenance.len() != l || provenance.iter().any(|r| r.len() != l) {
            return Err(Error::SizeMismatch { expected: l, got: provenance.len() });
        }
        Ok(Self { values, provenance })
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn provenance(&self, i: usize, j: usize) -> &str {
        &self.provenance[i][j]
    }

    /// Shortest-path closure: replaces `V[i][j]` by `min_k V[i][k] + V[k][j]`
    /// when the detour is cheaper. Applied to optimizer output, whose entries
    /// are upper bounds, this only tightens them.
    pub fn closure(&self) -> Self {
        let l = self.size();
        let mut v = self.values.clone();
        let mut p = self.provenance.clone();
        for k in 0..l {
            for i in 0..l {
                for j in 0..l {
                    let d = v[i][k] + v[k][j];
                    if d < v[i][j] {
                        v[i][j] = d;
                        p[i][j] = format!("closure({i}->{k}->{j})");
                    }
                }
            }
        }
        Self { values: v, provenance: p }
    }

    /// Submatrix on `idx`, in that order.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self {
            values: idx.iter().map(|&i| idx.iter().map(|&j| self.values[i][j]).collect()).collect(),
            provenance: idx
                .iter()
                .map(|&i| idx.iter().map(|&j| self.provenance[i][j].clone()).collect())
                .collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::ser(path, e))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&s).map_err(|e| Error::ser(path, e))?;
        Self::with_provenance(m.values, m.provenance)
    }
}

/// A chain `(m_1 -> m_2 -> ... -> m_l)` visiting every index once.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Chain(pub Vec<usize>);

impl Chain {
    pub fn arrows(&self) -> Vec<(usize, usize)> {
        self.0.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Sum of `V` over the arrows; `inf` saturates.
    pub fn cost(&self, v: &QuasipotentialMatrix) -> f64 {
        self.0.windows(2).map(|w| v.get(w[0], w[1])).sum()
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// All chains of `G_l(i)` in lexicographic order; there are `(l - 1)!`.
pub fn enumerate_chains(l: usize, i: usize) -> Result<Vec<Chain>> {
    if l == 0 || i >= l {
        return Err(Error::InvalidArgument(format!("need i < l, got i = {i}, l = {l}")));
    }
    if l > MAX_CHAIN_SIZE {
        return Err(Error::Budget(l));
    }
    let mut head: Vec<usize> = (0..l).filter(|&k| k != i).collect();
    let mut out = Vec::new();
    loop {
        let mut c = head.clone();
        c.push(i);
        out.push(Chain(c));
        if !next_permutation(&mut head) {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WValue {
    #[serde(with = "inf_serde")]
    pub value: f64,
    /// Lexicographically first minimizer; absent when every chain is infinite.
    pub chain: Option<Chain>,
    /// Number of chains attaining the minimum.
    pub n_ties: usize,
    pub infinite: bool,
}

/// `W_l(u_i) = min over G_l(i)` of the arrow sums.
pub fn w_value(i: usize, v: &QuasipotentialMatrix) -> Result<WValue> {
    let chains = enumerate_chains(v.size(), i)?;
    let mut best = f64::INFINITY;
    let mut arg: Option<Chain> = None;
    let mut ties = 0;
    for c in chains {
        let s = c.cost(v);
        if s < best {
            best = s;
            arg = Some(c);
            ties = 1;
        } else if s == best && s.is_finite() {
            ties += 1;
        }
    }
    Ok(WValue {
        value: best,
        infinite: best.is_infinite(),
        chain: arg,
        n_ties: ties,
    })
}

/// Classical in-tree minimum: every `j != i` has exactly one outgoing arrow
/// and all arrows lead to `i`. Diagnostic comparison only.
pub fn w_in_tree(i: usize, v: &QuasipotentialMatrix) -> Result<f64> {
    let l = v.size();
    if i >= l {
        return Err(Error::InvalidArgument(format!("index {i} out of range {l}")));
    }
    if l > 8 {
        return Err(Error::Budget(l));
    }
    let others: Vec<usize> = (0..l).filter(|&k| k != i).collect();
    let mut parent = vec![0usize; l];
    let mut best = f64::INFINITY;
    let total = l.pow(others.len() as u32);
    for code in 0..total {
        let mut c = code;
        let mut ok = true;
        for &k in &others {
            parent[k] = c % l;
            c /= l;
            if parent[k] == k {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        // every node must reach i within l steps
        let reaches = others.iter().all(|&k| {
            let mut x = k;
            for _ in 0..l {
                if x == i {
                    return true;
                }
                x = parent[x];
            }
            x == i
        });
        if reaches {
            let s: f64 = others.iter().map(|&k| v.get(k, parent[k])).sum();
            best = best.min(s);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateValue {
    #[serde(with = "inf_serde")]
    pub value: f64,
    /// Same formula with both minima over the stable indices only.
    #[serde(with = "inf_serde::option")]
    pub stable_only: Option<f64>,
}

fn saturating_diff(a: f64, b: f64) -> f64 {
    if a.is_infinite() {
        f64::INFINITY
    } else {
        a - b
    }
}

fn rate_from_w(w: &[f64], v_to_target: &[f64], idx: &[usize]) -> f64 {
    let num = idx.iter().map(|&i| w[i] + v_to_target[i]).fold(f64::INFINITY, f64::min);
    let den = idx.iter().map(|&i| w[i]).fold(f64::INFINITY, f64::min);
    if den.is_infinite() {
        return f64::INFINITY;
    }
    saturating_diff(num, den).max(0.0)
}

/// `min_i [W(u_i) + V(u_i, u)] - min_i W(u_i)`; `stable` optionally marks the
/// indices for the restricted variant.
pub fn rate_function(v: &QuasipotentialMatrix, v_to_target: &[f64], stable: Option<&[bool]>) -> Result<RateValue> {
    let l = v.size();
    if v_to_target.len() != l {
        return Err(Error::SizeMismatch { expected: l, got: v_to_target.len() });
    }
    let w: Vec<f64> = (0..l).map(|i| w_value(i, v).map(|x| x.value)).collect::<Result<_>>()?;
    let all: Vec<usize> = (0..l).collect();
    let stable_only = match stable {
        Some(mask) => {
            if mask.len() != l {
                return Err(Error::SizeMismatch { expected: l, got: mask.len() });
            }
            let idx: Vec<usize> = (0..l).filter(|&i| mask[i]).collect();
            (!idx.is_empty()).then(|| rate_from_w(&w, v_to_target, &idx))
        }
        None => None,
    };
    Ok(RateValue {
        value: rate_from_w(&w, v_to_target, &all),
        stable_only,
    })
}

/// `W` and the rate function evaluated at every point of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunctionTable {
    #[serde(with = "inf_serde::vec")]
    pub w: Vec<f64>,
    pub argmin: Vec<Option<Chain>>,
    pub n_ties: Vec<usize>,
    #[serde(with = "inf_serde::vec")]
    pub rate: Vec<f64>,
    pub stable: Vec<bool>,
    #[serde(with = "inf_serde::vec")]
    pub rate_stable_only: Vec<f64>,
    /// In-tree minima, when requested.
    pub in_tree: Option<Vec<inf_serde::Real>>,
}

impl RateFunctionTable {
    pub fn build(v: &QuasipotentialMatrix, stable: &[bool], with_in_tree: bool) -> Result<Self> {
        let l = v.size();
        if stable.len() != l {
            return Err(Error::SizeMismatch { expected: l, got: stable.len() });
        }
        let ws: Vec<WValue> = (0..l).map(|i| w_value(i, v)).collect::<Result<_>>()?;
        let w: Vec<f64> = ws.iter().map(|x| x.value).collect();
        let all: Vec<usize> = (0..l).collect();
        let st: Vec<usize> = (0..l).filter(|&i| stable[i]).collect();
        let mut rate = Vec::with_capacity(l);
        let mut rate_stable_only = Vec::with_capacity(l);
        for k in 0..l {
            let col: Vec<f64> = (0..l).map(|i| v.get(i, k)).collect();
            rate.push(rate_from_w(&w, &col, &all));
            rate_stable_only.push(if st.is_empty() {
                f64::INFINITY
            } else {
                rate_from_w(&w, &col, &st)
            });
        }
        let in_tree = if with_in_tree {
            Some((0..l).map(|i| w_in_tree(i, v).map(inf_serde::Real)).collect::<Result<_>>()?)
        } else {
            None
        };
        Ok(Self {
            argmin: ws.iter().map(|x| x.chain.clone()).collect(),
            n_ties: ws.iter().map(|x| x.n_ties).collect(),
            w,
            rate,
            stable: stable.to_vec(),
            rate_stable_only,
            in_tree,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::ser(path, e))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per point: `index, stable, W, rate, rate_stable_only, chain`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::ser(path, e))?;
        w.write_record(["index", "stable", "w", "rate", "rate_stable_only", "chain"])
            .map_err(|e| Error::ser(path, e))?;
        for i in 0..self.w.len() {
            let chain = self.argmin[i]
                .as_ref()
                .map(|c| c.0.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(">"))
                .unwrap_or_default();
            w.write_record([
                i.to_string(),
                self.stable[i].to_string(),
                fmt_real(self.w[i]),
                fmt_real(self.rate[i]),
                fmt_real(self.rate_stable_only[i]),
                chain,
            ])
            .map_err(|e| Error::ser(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Shortest round-trip decimal, with `inf` for infinities.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
