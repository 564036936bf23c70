use hfgt::{compile, load_model, parse_scenario, Program};
use nalgebra::{DMatrix, DVector};

pub fn toy() -> Program {
    let model = load_model(include_str!("../data/toy.toml")).unwrap();
    compile(&model, &parse_scenario(include_str!("../data/toy_move.toml")).unwrap()).unwrap()
}

pub fn dense(m: &hfgt::sparse::CsrMatrix) -> DMatrix<f64> {
    let rows = m.to_dense();
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| rows[r][c])
}

pub struct Active {
    /// Constraint normals; rows with index < `free` carry free multipliers.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub free: usize,
}

/// Active constraints at the guessed active set, pruned to linearly
/// independent rows so the multipliers are unique. Equalities go first, so
/// a bound already implied by them is dropped.
pub fn active(p: &Program, zero: &[usize], tight: &[usize]) -> Active {
    let qp = &p.qp;
    let n = qp.layout.len();
    let (a, d) = (dense(&qp.a), dense(&qp.d));
    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    for r in 0..a.nrows() {
        rows.push((a.row(r).transpose(), qp.b[r], true));
    }
    for &r in tight {
        rows.push((d.row(r).transpose(), qp.e[r], false));
    }
    for &j in zero {
        // -x_j <= 0 held with equality
        let mut v = DVector::zeros(n);
        v[j] = -1.0;
        rows.push((v, 0.0, false));
    }
    let mut kept: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    let mut rank = 0;
    for row in rows {
        let mut trial = DMatrix::zeros(kept.len() + 1, n);
        for (i, k) in kept.iter().chain(std::iter::once(&row)).enumerate() {
            trial.row_mut(i).copy_from(&k.0.transpose());
        }
        let r = trial.rank(1e-10);
        if r > rank {
            rank = r;
            kept.push(row);
        }
    }
    let free = kept.iter().filter(|k| k.2).count();
    let g = DMatrix::from_fn(kept.len(), n, |i, j| kept[i].0[j]);
    let h = DVector::from_iterator(kept.len(), kept.iter().map(|k| k.1));
    Active { g, h, free }
}

/// Minimizer of `x'Fx + f'x` with every active constraint held as an
/// equality, from the dense KKT system.
pub fn kkt_point(p: &Program, act: &Active) -> DVector<f64> {
    let qp = &p.qp;
    let n = qp.layout.len();
    let m = act.g.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    for j in 0..n {
        k[(j, j)] = 2.0 * qp.f_diag[j];
    }
    k.view_mut((0, n), (n, m)).copy_from(&act.g.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&act.g);
    let mut rhs = DVector::zeros(n + m);
    for j in 0..n {
        rhs[j] = -qp.f[j];
    }
    rhs.rows_mut(n, m).copy_from(&act.h);
    let sol = k.lu().solve(&rhs).expect("KKT matrix of independent rows is nonsingular");
    sol.rows(0, n).into_owned()
}

/// KKT conditions of `min x'Fx + f'x, Ax = b, Dx <= e, x >= 0` at `x`:
/// feasibility, stationarity, and non-negative multipliers on the active
/// inequalities.
pub fn certify(p: &Program, x: &DVector<f64>, act: &Active) -> Result<(), String> {
    let qp = &p.qp;
    let n = x.len();
    let (a, d) = (dense(&qp.a), dense(&qp.d));
    let eq = (&a * x - DVector::from_column_slice(&qp.b)).amax();
    let ineq = (&d * x - DVector::from_column_slice(&qp.e)).max();
    let neg = -x.min();
    if eq > 1e-10 || ineq > 1e-10 || neg > 1e-10 {
        return Err(format!("infeasible: {eq:e} {ineq:e} {neg:e}"));
    }
    // 2Fx + f + G'y = 0
    let grad = DVector::from_fn(n, |j, _| 2.0 * qp.f_diag[j] * x[j] + qp.f[j]);
    let gt = act.g.transpose();
    let y = gt.clone().svd(true, true).solve(&(-&grad), 1e-12).unwrap();
    let stationarity = (&grad + &gt * &y).amax();
    if stationarity > 1e-9 {
        return Err(format!("not stationary: {stationarity:e}"));
    }
    let worst = y.rows(act.free, y.len() - act.free).iter().fold(0.0_f64, |m, &v| m.min(v));
    if worst < -1e-9 {
        return Err(format!("negative multiplier {worst:e}"));
    }
    Ok(())
}

