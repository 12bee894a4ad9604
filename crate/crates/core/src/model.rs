//! Fluid model definition, validation, phase partition and censoring.
//!
//! A model is a pair `(Q, c)`: an irreducible generator `Q` driving the
//! phase process and a vector of fluid rates `c`, one per phase. Every
//! derived object in this crate works in the permuted `(up, down, zero)`
//! phase ordering produced by [`partition_phases`]; results are mapped back
//! to the caller's phase indices only at the output boundary.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FluidError, Result};
use crate::numerics;

/// Default threshold on `|μ|` below which a model is treated as null recurrent.
pub const DEFAULT_TOL_DRIFT: f64 = 1e-10;

const ROW_SUM_TOL: f64 = 1e-12;

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelDocument {
    pub generator: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// A validated Markov-modulated fluid model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel {
    generator: DMatrix<f64>,
    rates: DVector<f64>,
    labels: Option<Vec<String>>,
}

impl FluidModel {
    /// Validates and builds a model.
    ///
    /// Row sums are checked against `1e-12` scaled by the largest entry of
    /// the row, so that models written with rates of order 10³ still load.
    pub fn new(generator: DMatrix<f64>, rates: DVector<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let m = generator.nrows();
        if generator.ncols() != m {
            return Err(FluidError::DimensionMismatch(format!(
                "generator is {}x{}, expected square",
                m,
                generator.ncols()
            )));
        }
        if rates.len() != m {
            return Err(FluidError::DimensionMismatch(format!(
                "generator has {m} phases but {} rates were given",
                rates.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != m {
                return Err(FluidError::DimensionMismatch(format!(
                    "generator has {m} phases but {} labels were given",
                    l.len()
                )));
            }
        }
        if m < 2 {
            return Err(FluidError::TooFewPhases(m));
        }
        for i in 0..m {
            if !rates[i].is_finite() {
                return Err(FluidError::InvalidArgument(format!("rate {i} is not finite")));
            }
            let mut sum = 0.0;
            let mut scale = 1.0f64;
            for j in 0..m {
                let q = generator[(i, j)];
                if !q.is_finite() {
                    return Err(FluidError::NonFinite { row: i, col: j });
                }
                if i != j && q < 0.0 {
                    return Err(FluidError::NegativeOffDiagonal { row: i, col: j, value: q });
                }
                sum += q;
                scale = scale.max(q.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(FluidError::RowSum { row: i, sum });
            }
        }
        check_irreducible(&generator)?;
        Ok(FluidModel { generator, rates, labels })
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let m = doc.generator.len();
        for (i, row) in doc.generator.iter().enumerate() {
            if row.len() != m {
                return Err(FluidError::DimensionMismatch(format!(
                    "generator row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
        }
        let generator = DMatrix::from_fn(m, m, |i, j| doc.generator[i][j]);
        let rates = DVector::from_vec(doc.rates);
        FluidModel::new(generator, rates, doc.labels)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| FluidError::Parse(e.to_string()))?;
        FluidModel::from_document(doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        FluidModel::from_json_str(&text)
    }

    pub fn to_document(&self) -> ModelDocument {
        let m = self.dim();
        ModelDocument {
            generator: (0..m).map(|i| (0..m).map(|j| self.generator[(i, j)]).collect()).collect(),
            rates: self.rates.iter().copied().collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn rates(&self) -> &DVector<f64> {
        &self.rates
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Display label of phase `i` (0-based): the user label or `phase_{i+1}`.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => format!("phase_{}", i + 1),
        }
    }
}

/// Parses and validates a JSON model document.
pub fn load_model(source: &str) -> Result<FluidModel> {
    FluidModel::from_json_str(source)
}

/// Strong connectivity of the support graph of the off-diagonal entries.
fn check_irreducible(q: &DMatrix<f64>) -> Result<()> {
    let m = q.nrows();
    let reach = |forward: bool| -> Option<usize> {
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..m {
                let w = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.iter().position(|s| !s)
    };
    if let Some(missing) = reach(true) {
        return Err(FluidError::Reducible(missing));
    }
    if let Some(missing) = reach(false) {
        return Err(FluidError::Reducible(missing));
    }
    Ok(())
}

/// Index set of a block in the permuted ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Up,
    Down,
    Zero,
}

/// Phase indices split by the sign of their rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePartition {
    pub up: Vec<usize>,
    pub down: Vec<usize>,
    pub zero: Vec<usize>,
    /// `order[k]` is the original index of the phase at permuted position `k`.
    pub order: Vec<usize>,
    /// `position[i]` is the permuted position of original phase `i`.
    pub position: Vec<usize>,
}

impl PhasePartition {
    pub fn m_up(&self) -> usize {
        self.up.len()
    }

    pub fn m_down(&self) -> usize {
        self.down.len()
    }

    pub fn m_zero(&self) -> usize {
        self.zero.len()
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    /// Range of permuted positions occupied by `block`.
    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let (u, d) = (self.m_up(), self.m_down());
        match block {
            Block::Up => 0..u,
            Block::Down => u..u + d,
            Block::Zero => u + d..self.dim(),
        }
    }

    pub fn indices(&self, block: Block) -> &[usize] {
        match block {
            Block::Up => &self.up,
            Block::Down => &self.down,
            Block::Zero => &self.zero,
        }
    }

    pub fn permute_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| a[(self.order[i], self.order[j])])
    }

    pub fn permute_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| v[self.order[i]])
    }

    /// Inverse of [`permute_vector`](Self::permute_vector).
    pub fn unpermute_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| v[self.position[i]])
    }

    /// Reorders the rows of a matrix whose rows are in permuted order.
    pub fn unpermute_rows(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(self.position[i], j)])
    }
}

pub fn partition_phases(model: &FluidModel) -> PhasePartition {
    let mut up = Vec::new();
    let mut down = Vec::new();
    let mut zero = Vec::new();
    for (i, &c) in model.rates().iter().enumerate() {
        if c > 0.0 {
            up.push(i);
        } else if c < 0.0 {
            down.push(i);
        } else {
            zero.push(i);
        }
    }
    let order: Vec<usize> = up.iter().chain(&down).chain(&zero).copied().collect();
    let mut position = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }
    PhasePartition { up, down, zero, order, position }
}

/// Drift regime of the regulated process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    PositiveRecurrent,
    NullRecurrent,
    Transient,
}

/// The phase process observed only while the level moves, together with the
/// permuted generator blocks that the downstream formulas need.
#[derive(Debug, Clone)]
pub struct CensoredGenerator {
    partition: PhasePartition,
    /// `Q` in `(up, down, zero)` order.
    q: DMatrix<f64>,
    /// Censored generator on `up ∪ down`.
    t: DMatrix<f64>,
    c_up: DVector<f64>,
    /// Absolute values of the negative rates.
    c_down: DVector<f64>,
    rates: DVector<f64>,
    drift: f64,
    /// Stationary vector of `Q`, original phase order.
    alpha: DVector<f64>,
}

impl CensoredGenerator {
    pub fn partition(&self) -> &PhasePartition {
        &self.partition
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Block of the censored generator; `Block::Zero` is not allowed.
    pub fn t_block(&self, rows: Block, cols: Block) -> DMatrix<f64> {
        assert!(rows != Block::Zero && cols != Block::Zero, "T has no zero block");
        let r = self.partition.range(rows);
        let c = self.partition.range(cols);
        self.t.view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    /// Block of the permuted generator `Q`.
    pub fn q_block(&self, rows: Block, cols: Block) -> DMatrix<f64> {
        let r = self.partition.range(rows);
        let c = self.partition.range(cols);
        self.q.view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    pub fn q_permuted(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c_up(&self) -> &DVector<f64> {
        &self.c_up
    }

    pub fn c_down_abs(&self) -> &DVector<f64> {
        &self.c_down
    }

    /// Rates in original phase order.
    pub fn rates(&self) -> &DVector<f64> {
        &self.rates
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn alpha_permuted(&self) -> DVector<f64> {
        self.partition.permute_vector(&self.alpha)
    }

    pub fn m_up(&self) -> usize {
        self.partition.m_up()
    }

    pub fn m_down(&self) -> usize {
        self.partition.m_down()
    }

    pub fn m_zero(&self) -> usize {
        self.partition.m_zero()
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    /// `[[Q_dd, Q_d0], [Q_0d, Q_00]]` with an optional `-s` diagonal shift.
    pub(crate) fn down_zero_block(&self, s: f64) -> DMatrix<f64> {
        let start = self.m_up();
        let n = self.dim() - start;
        let mut b = self.q.view((start, start), (n, n)).into_owned();
        for i in 0..n {
            b[(i, i)] -= s;
        }
        b
    }
}

/// Builds the censored generator `T = Q_{±±} + Q_{±0}(−Q_00)⁻¹Q_{0±}`.
pub fn censor(model: &FluidModel, partition: &PhasePartition) -> Result<CensoredGenerator> {
    if partition.up.is_empty() {
        return Err(FluidError::OneDirectional("no phase with positive rate"));
    }
    if partition.down.is_empty() {
        return Err(FluidError::OneDirectional("no phase with negative rate"));
    }
    let q = partition.permute_matrix(model.generator());
    let t = censored_matrix(&q, partition.m_up() + partition.m_down(), 0.0)?;

    let c_up = DVector::from_iterator(partition.m_up(), partition.up.iter().map(|&i| model.rates()[i]));
    let c_down = DVector::from_iterator(partition.m_down(), partition.down.iter().map(|&i| -model.rates()[i]));

    let alpha = numerics::stationary_of(model.generator())?;
    let drift = alpha.dot(model.rates());

    Ok(CensoredGenerator {
        partition: partition.clone(),
        q,
        t,
        c_up,
        c_down,
        rates: model.rates().clone(),
        drift,
        alpha,
    })
}

/// Censors the trailing zero-rate block out of the permuted `q`, after
/// shifting every diagonal entry by `-s`. `moving` is `m₊ + m₋`.
pub(crate) fn censored_matrix(q: &DMatrix<f64>, moving: usize, s: f64) -> Result<DMatrix<f64>> {
    let m = q.nrows();
    let mut t = q.view((0, 0), (moving, moving)).into_owned();
    for i in 0..moving {
        t[(i, i)] -= s;
    }
    let m0 = m - moving;
    if m0 > 0 {
        let mut neg_q00 = -q.view((moving, moving), (m0, m0)).into_owned();
        for i in 0..m0 {
            neg_q00[(i, i)] += s;
        }
        let q_to_zero = q.view((0, moving), (moving, m0));
        let q_from_zero = q.view((moving, 0), (m0, moving)).into_owned();
        // every principal submatrix of an irreducible generator is nonsingular
        let lu = neg_q00.lu();
        let solved = lu.solve(&q_from_zero).ok_or_else(|| FluidError::Singular("zero-rate block Q_00".into()))?;
        t += q_to_zero * solved;
    }
    Ok(t)
}

pub fn classify(censored: &CensoredGenerator) -> Regime {
    classify_with(censored, DEFAULT_TOL_DRIFT)
}

pub fn classify_with(censored: &CensoredGenerator, tol_drift: f64) -> Regime {
    regime_of_drift(censored.drift(), tol_drift)
}

pub fn regime_of_drift(mu: f64, tol_drift: f64) -> Regime {
    if mu < -tol_drift {
        Regime::PositiveRecurrent
    } else if mu > tol_drift {
        Regime::Transient
    } else {
        Regime::NullRecurrent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model(q: &[&[f64]], c: &[f64]) -> Result<FluidModel> {
        let m = q.len();
        FluidModel::new(DMatrix::from_fn(m, m, |i, j| q[i][j]), DVector::from_column_slice(c), None)
    }

    #[test]
    fn loads_smallest_symmetric_model() {
        let m = load_model(r#"{"generator": [[-1, 1], [1, -1]], "rates": [1, -1]}"#).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.label(1), "phase_2");
    }

    #[test]
    fn loads_four_phase_rates() {
        let doc = r#"{
            "generator": [[-3,1,1,1],[1,-3,1,1],[1,1,-3,1],[1,1,1,-3]],
            "rates": [-0.8, -1.4, 2, 1],
            "labels": ["a","b","c","d"]
        }"#;
        let m = load_model(doc).unwrap();
        assert_eq!(m.dim(), 4);
        assert_eq!(m.label(2), "c");
    }

    #[test]
    fn rejects_absorbing_state() {
        let err = model(&[&[-1.0, 1.0], &[0.0, 0.0]], &[1.0, -1.0]).unwrap_err();
        assert!(matches!(err, FluidError::Reducible(_)), "{err}");
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(load_model("{"), Err(FluidError::Parse(_))));
        assert!(matches!(model(&[&[-1.0, 1.1], &[1.0, -1.0]], &[1.0, -1.0]), Err(FluidError::RowSum { row: 0, .. })));
        assert!(matches!(
            model(&[&[1.0, -1.0], &[1.0, -1.0]], &[1.0, -1.0]),
            Err(FluidError::NegativeOffDiagonal { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            model(&[&[-1.0, 1.0], &[1.0, -1.0]], &[1.0, -1.0, 0.0]),
            Err(FluidError::DimensionMismatch(_))
        ));
        assert!(matches!(
            load_model(r#"{"generator": [[-1, 1], [1]], "rates": [1, -1]}"#),
            Err(FluidError::DimensionMismatch(_))
        ));
        assert!(matches!(model(&[&[0.0]], &[1.0]), Err(FluidError::TooFewPhases(1))));
    }

    #[test]
    fn partition_by_sign() {
        let q = [[-3.0, 1.0, 1.0, 1.0], [1.0, -3.0, 1.0, 1.0], [1.0, 1.0, -3.0, 1.0], [1.0, 1.0, 1.0, -3.0]];
        let rows: Vec<&[f64]> = q.iter().map(|r| &r[..]).collect();
        let p = partition_phases(&model(&rows, &[-0.8, -1.4, 2.0, 1.0]).unwrap());
        assert_eq!(p.up, vec![2, 3]);
        assert_eq!(p.down, vec![0, 1]);
        assert!(p.zero.is_empty());
        assert_eq!(p.order, vec![2, 3, 0, 1]);

        let p = partition_phases(&model(&[&[-1.0, 1.0], &[1.0, -1.0]], &[1.0, -1.0]).unwrap());
        assert_eq!((p.up.clone(), p.down.clone()), (vec![0], vec![1]));

        let p = partition_phases(
            &model(&[&[-2.0, 1.0, 1.0], &[1.0, -2.0, 1.0], &[1.0, 1.0, -2.0]], &[1.0, -1.0, 0.0]).unwrap(),
        );
        assert_eq!((p.up.clone(), p.down.clone(), p.zero.clone()), (vec![0], vec![1], vec![2]));
    }

    #[test]
    fn censoring_without_zero_phases_permutes_q() {
        let m = model(&[&[-1.0, 1.0], &[2.0, -2.0]], &[-1.0, 1.0]).unwrap();
        let p = partition_phases(&m);
        let c = censor(&m, &p).unwrap();
        assert_eq!(c.t(), &DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]));
    }

    #[test]
    fn censoring_integrates_out_zero_phase() {
        let m = model(&[&[-2.0, 1.0, 1.0], &[1.0, -2.0, 1.0], &[1.0, 1.0, -2.0]], &[1.0, -1.0, 0.0]).unwrap();
        let c = censor(&m, &partition_phases(&m)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-1.5, 1.5, 1.5, -1.5]);
        assert_abs_diff_eq!(c.t(), &expected, epsilon = 1e-14);
    }

    #[test]
    fn censoring_rejects_one_directional_models() {
        let m = model(&[&[-1.0, 1.0], &[1.0, -1.0]], &[1.0, 2.0]).unwrap();
        assert!(matches!(censor(&m, &partition_phases(&m)), Err(FluidError::OneDirectional(_))));
        let m = model(&[&[-1.0, 1.0], &[1.0, -1.0]], &[-1.0, 0.0]).unwrap();
        assert!(matches!(censor(&m, &partition_phases(&m)), Err(FluidError::OneDirectional(_))));
    }

    #[test]
    fn drift_and_regime() {
        let cases = [
            ([-2.0, 2.0, 1.0, -1.0], -1.0 / 3.0, Regime::PositiveRecurrent),
            ([-1.0, 1.0, 1.0, -1.0], 0.0, Regime::NullRecurrent),
            ([-1.0, 1.0, 2.0, -2.0], 1.0 / 3.0, Regime::Transient),
        ];
        for (q, mu, regime) in cases {
            let m =
                FluidModel::new(DMatrix::from_row_slice(2, 2, &q), DVector::from_vec(vec![1.0, -1.0]), None).unwrap();
            let c = censor(&m, &partition_phases(&m)).unwrap();
            assert_abs_diff_eq!(c.drift(), mu, epsilon = 1e-15);
            assert_eq!(classify(&c), regime);
        }
    }

    #[test]
    fn drift_tolerance_is_configurable() {
        assert_eq!(regime_of_drift(-1e-9, DEFAULT_TOL_DRIFT), Regime::PositiveRecurrent);
        assert_eq!(regime_of_drift(-1e-9, 1e-8), Regime::NullRecurrent);
        assert_eq!(regime_of_drift(1e-11, DEFAULT_TOL_DRIFT), Regime::NullRecurrent);
    }
}
