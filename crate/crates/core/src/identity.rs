//! Identity geometry: cosine distances, distance matrices, and the
//! row-wise Pearson objective comparing the speech matrix with the face
//! matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EmbeddingVector;

/// Whether the always-zero self entry takes part in row correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalPolicy {
    #[default]
    Include,
    Exclude,
}

/// Relative floor under which a row's spread counts as zero variance.
pub(crate) const REL_VARIANCE_FLOOR: f64 = 1e-12;

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    cosine_distance_slices(u.as_slice(), v.as_slice())
}

pub(crate) fn cosine_distance_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu <= 0.0 || nv <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    if u == v {
        return Ok(0.0);
    }
    Ok((1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0))
}

/// Dense symmetric distance matrix whose rows and columns follow `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    order: Vec<String>,
}

impl DistanceMatrix {
    /// Wraps a row-major square matrix after checking shape, symmetry,
    /// zero diagonal and range.
    pub fn from_values(values: Vec<f64>, order: Vec<String>) -> Result<Self> {
        let n = order.len();
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: n * n,
            });
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=2.0).contains(&v) || v != values[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({i},{j}) breaks symmetry or lies outside [0, 2]"
                    )));
                }
            }
        }
        Ok(Self { n, values, order })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_raw(values: Vec<f64>, order: Vec<String>) -> Self {
        debug_assert_eq!(values.len(), order.len() * order.len());
        Self {
            n: order.len(),
            values,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes the grid as comma-separated rows with an id header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for id in &self.order {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.order.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise cosine-distance matrix of `embeddings`, labelled by `order`.
pub fn build_distance_matrix(embeddings: &[&EmbeddingVector], order: Vec<String>) -> Result<DistanceMatrix> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::TooFewElements { required: 2, actual: n });
    }
    if order.len() != n {
        return Err(Error::LengthMismatch {
            left: order.len(),
            right: n,
        });
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(embeddings[i], embeddings[j])?;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix::from_raw(values, order))
}

/// Centered second-order statistics of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RowStats {
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

impl RowStats {
    pub fn of(values: impl Iterator<Item = f64> + Clone, n: usize) -> Self {
        let mean = values.clone().sum::<f64>() / n as f64;
        let m2 = values.map(|v| (v - mean) * (v - mean)).sum();
        Self { mean, m2 }
    }

    pub fn is_degenerate(&self, n: usize) -> bool {
        self.m2 <= REL_VARIANCE_FLOOR * (self.m2 + n as f64 * self.mean * self.mean)
    }
}

/// Pearson coefficient from co-moment and the two rows' statistics, 0 when
/// either row has no spread.
pub(crate) fn pearson_from_stats(cov: f64, x: RowStats, y: RowStats, n: usize) -> f64 {
    if x.is_degenerate(n) || y.is_degenerate(n) {
        return 0.0;
    }
    (cov / (x.m2 * y.m2).sqrt()).clamp(-1.0, 1.0)
}

/// Sample Pearson correlation of `x` and `y`, optionally leaving out one
/// index. Zero-variance inputs yield 0.
pub fn row_pearson(x: &[f64], y: &[f64], exclude_diag_index: Option<usize>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let required = if exclude_diag_index.is_some() { 3 } else { 2 };
    if x.len() < required {
        return Err(Error::TooFewElements {
            required,
            actual: x.len(),
        });
    }
    if let Some(skip) = exclude_diag_index {
        if skip >= x.len() {
            return Err(Error::InvalidParameter(format!(
                "excluded index {skip} out of range for length {}",
                x.len()
            )));
        }
    }
    Ok(pearson_unchecked(x, y, exclude_diag_index))
}

pub(crate) fn pearson_unchecked(x: &[f64], y: &[f64], skip: Option<usize>) -> f64 {
    let n = x.len() - usize::from(skip.is_some());
    let keep = |j: &usize| Some(*j) != skip;
    let xs = RowStats::of((0..x.len()).filter(keep).map(|j| x[j]), n);
    let ys = RowStats::of((0..y.len()).filter(keep).map(|j| y[j]), n);
    let cov = (0..x.len()).filter(keep).map(|j| (x[j] - xs.mean) * y[j]).sum::<f64>();
    pearson_from_stats(cov, xs, ys, n)
}

/// Per-row correlations between matched rows of `sd` and `fd`.
pub fn row_correlations(sd: &DistanceMatrix, fd: &DistanceMatrix, policy: DiagonalPolicy) -> Result<Vec<f64>> {
    if sd.order() != fd.order() {
        return Err(Error::OrderMismatch);
    }
    let n = sd.len();
    let min = match policy {
        DiagonalPolicy::Include => 2,
        DiagonalPolicy::Exclude => 3,
    };
    if n < min {
        return Err(Error::TooFewElements {
            required: min,
            actual: n,
        });
    }
    Ok((0..n)
        .map(|i| {
            let skip = (policy == DiagonalPolicy::Exclude).then_some(i);
            pearson_unchecked(sd.row(i), fd.row(i), skip)
        })
        .collect())
}

/// Mean row-wise correlation of `fd` against `sd`: the assignment objective.
pub fn corr_objective(sd: &DistanceMatrix, fd: &DistanceMatrix, policy: DiagonalPolicy) -> Result<f64> {
    let rows = row_correlations(sd, fd, policy)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn cosine_distance_reference_cases() {
        let e = |v: &[f64]| emb(v);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[-1.0, 0.0])).unwrap(), 2.0);
        assert!(matches!(
            cosine_distance(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_distance_slices(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn distance_matrix_examples() {
        let a = emb(&[0.3, 0.4]);
        let m = build_distance_matrix(&[&a, &a], ids(2)).unwrap();
        assert_eq!(m.values(), &[0.0; 4]);

        let (x, y, z) = (emb(&[1.0, 0.0]), emb(&[0.0, 1.0]), emb(&[-1.0, 0.0]));
        let m = build_distance_matrix(&[&x, &y, &z], ids(3)).unwrap();
        assert_eq!((m.get(0, 1), m.get(0, 2), m.get(1, 2)), (1.0, 2.0, 1.0));
        assert!(matches!(
            build_distance_matrix(&[&x], ids(1)),
            Err(Error::TooFewElements { .. })
        ));
    }

    #[test]
    fn row_pearson_examples() {
        let x = [0.0, 0.2, 0.8];
        assert!((row_pearson(&x, &x, None).unwrap() - 1.0).abs() < 1e-15);
        let y = [1.0, 0.8, 0.2];
        assert!((row_pearson(&x, &y, None).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(row_pearson(&x, &[0.5, 0.5, 0.5], None).unwrap(), 0.0);
        assert!(matches!(
            row_pearson(&x, &[1.0, 2.0], None),
            Err(Error::LengthMismatch { .. })
        ));
    }

    /// Textbook Pearson on explicit vectors; independent of the row path.
    fn textbook(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn three_by_three_regression_pin() {
        // SD off-diagonals (0,1)=0.2 (0,2)=0.9 (1,2)=0.9; FD 0.1, 0.8, 0.8.
        let sd = DistanceMatrix::from_values(vec![0.0, 0.2, 0.9, 0.2, 0.0, 0.9, 0.9, 0.9, 0.0], ids(3)).unwrap();
        let fd = DistanceMatrix::from_values(vec![0.0, 0.1, 0.8, 0.1, 0.0, 0.8, 0.8, 0.8, 0.0], ids(3)).unwrap();
        // Rows including the diagonal, by hand:
        //   row0 x=(0,.2,.9) y=(0,.1,.8): mx=11/30, my=3/10;
        //   dx=(-11,-5,16)/30, dy=(-3,-2,5)/10 -> sum dxdy=(33+10+80)/300=123/300,
        //   sum dx^2=(121+25+256)/900=402/900, sum dy^2=38/100
        //   r0 = 0.41/sqrt(0.446667*0.38) = 0.995177...
        //   row1 identical to row0 up to permutation -> r1 = r0.
        //   row2 x=(.9,.9,0) y=(.8,.8,0): exact affine -> r2 = 1.
        let r0 = 0.41 / ((402.0 / 900.0) * 0.38f64).sqrt();
        let expected = (2.0 * r0 + 1.0) / 3.0;
        let got = corr_objective(&sd, &fd, DiagonalPolicy::Include).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.996_784_599_921_126_4).abs() < 1e-12, "{got}");

        // Excluding the diagonal leaves two entries per row; row0 (0.2,0.9) vs
        // (0.1,0.8) and row1 likewise are +1, row2 (0.9,0.9) is constant -> 0.
        let ex = corr_objective(&sd, &fd, DiagonalPolicy::Exclude).unwrap();
        assert!((ex - 2.0 / 3.0).abs() < 1e-12);
        assert!((textbook(sd.row(0), fd.row(0)) - r0).abs() < 1e-12);
    }

    #[test]
    fn self_objective_is_one_and_order_checked() {
        let es: Vec<EmbeddingVector> = [[1.0, 0.1], [0.2, 1.0], [-1.0, 0.3], [0.5, 0.5]]
            .iter()
            .map(|v| emb(v))
            .collect();
        let refs: Vec<&EmbeddingVector> = es.iter().collect();
        let sd = build_distance_matrix(&refs, ids(4)).unwrap();
        assert!((corr_objective(&sd, &sd, DiagonalPolicy::Include).unwrap() - 1.0).abs() < 1e-12);
        let other = build_distance_matrix(&refs, (0..4).map(|i| format!("x{i}")).collect()).unwrap();
        assert!(matches!(
            corr_objective(&sd, &other, DiagonalPolicy::Include),
            Err(Error::OrderMismatch)
        ));
    }

    fn unit_vectors(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(
            prop::collection::vec(-1.0f64..1.0, d)
                .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3),
            n,
        )
    }

    proptest! {
        #[test]
        fn matrix_is_symmetric_zero_diagonal(vs in unit_vectors(6, 4)) {
            let es: Vec<EmbeddingVector> = vs.into_iter().map(|v| EmbeddingVector::new(v).unwrap()).collect();
            let refs: Vec<&EmbeddingVector> = es.iter().collect();
            let m = build_distance_matrix(&refs, ids(6)).unwrap();
            for i in 0..6 {
                prop_assert_eq!(m.get(i, i), 0.0);
                for j in 0..6 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!((0.0..=2.0).contains(&m.get(i, j)));
                }
            }
        }

        #[test]
        fn pearson_symmetric_and_affine_invariant(
            x in prop::collection::vec(0.0f64..2.0, 6),
            y in prop::collection::vec(0.0f64..2.0, 6),
            scale in 0.01f64..100.0,
            shift in -5.0f64..5.0,
        ) {
            let r = row_pearson(&x, &y, None).unwrap();
            prop_assert!((r - row_pearson(&y, &x, None).unwrap()).abs() < 1e-12);
            let ys: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            let rs = row_pearson(&x, &ys, None).unwrap();
            prop_assert!((r - rs).abs() < 1e-9, "{} vs {}", r, rs);
            prop_assert!((-1.0..=1.0).contains(&r));
        }

        #[test]
        fn objective_invariant_under_consistent_permutation(
            a in unit_vectors(6, 3), b in unit_vectors(6, 3), seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let ea: Vec<EmbeddingVector> = a.into_iter().map(|v| EmbeddingVector::new(v).unwrap()).collect();
            let eb: Vec<EmbeddingVector> = b.into_iter().map(|v| EmbeddingVector::new(v).unwrap()).collect();
            let sd = build_distance_matrix(&ea.iter().collect::<Vec<_>>(), ids(6)).unwrap();
            let fd = build_distance_matrix(&eb.iter().collect::<Vec<_>>(), ids(6)).unwrap();
            let pids: Vec<String> = perm.iter().map(|&i| format!("s{i}")).collect();
            let psd = build_distance_matrix(&perm.iter().map(|&i| &ea[i]).collect::<Vec<_>>(), pids.clone()).unwrap();
            let pfd = build_distance_matrix(&perm.iter().map(|&i| &eb[i]).collect::<Vec<_>>(), pids).unwrap();
            for policy in [DiagonalPolicy::Include, DiagonalPolicy::Exclude] {
                let o = corr_objective(&sd, &fd, policy).unwrap();
                let p = corr_objective(&psd, &pfd, policy).unwrap();
                prop_assert!((o - p).abs() < 1e-12);
            }
        }
    }
}
