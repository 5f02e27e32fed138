//! Standard-form cone program representation.
//!
//! Programs are stored as `min c^T x  s.t.  A x + s = b, s in K`, where `K`
//! is an ordered product of nonnegative-orthant and second-order cones. Rows
//! are kept sparse; the feasibility and synthesis programs have mostly empty
//! rows even though the solver itself works with dense factorizations.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("non-finite data in program")]
    NonFinite,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    NonNegative(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNegative(d) | Cone::SecondOrder(d) => d,
        }
    }
}

/// Row-sparse matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    cols: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows { cols, rows: Vec::new() }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Append a row given `(column, value)` entries; zero values are dropped.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        let mut row: Vec<(u32, f64)> = entries
            .iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|&(c, v)| {
                assert!(c < self.cols, "column {c} out of bounds");
                (c as u32, v)
            })
            .collect();
        row.sort_by_key(|&(c, _)| c);
        self.rows.push(row);
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(c, v)| v * x[c as usize]).sum()
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `y = A^T v`
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for &(c, a) in row {
                y[c as usize] += a * vi;
            }
        }
        y
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|(_, v)| v.is_finite()))
    }
}

/// `min c^T x  s.t.  A x + s = b, s in K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub c: Vec<f64>,
    pub a: SparseRows,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConeProgram {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    /// Number of cone blocks (the `r_S` of the solver complexity model).
    pub fn n_cone_blocks(&self) -> usize {
        self.cones.len()
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.a.cols() != self.c.len() {
            return Err(ProgramError::Malformed(format!(
                "A has {} columns but c has {} entries",
                self.a.cols(),
                self.c.len()
            )));
        }
        if self.a.n_rows() != self.b.len() {
            return Err(ProgramError::Malformed(format!(
                "A has {} rows but b has {} entries",
                self.a.n_rows(),
                self.b.len()
            )));
        }
        let cone_dim: usize = self.cones.iter().map(|c| c.dim()).sum();
        if cone_dim != self.b.len() {
            return Err(ProgramError::Malformed(format!(
                "cone dims sum to {} but there are {} rows",
                cone_dim,
                self.b.len()
            )));
        }
        if self.cones.iter().any(|c| c.dim() == 0) {
            return Err(ProgramError::Malformed("zero-dimensional cone".into()));
        }
        if self.c.is_empty() {
            return Err(ProgramError::Malformed("empty variable vector".into()));
        }
        if !self.a.is_finite()
            || self.b.iter().any(|v| !v.is_finite())
            || self.c.iter().any(|v| !v.is_finite())
        {
            return Err(ProgramError::NonFinite);
        }
        Ok(())
    }

    /// Plain-text dump: header with dims, the cone list, then `A` (dense,
    /// row-major), `b`, and `c`, one numeric row per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "drsafe-socp v1").unwrap();
        writeln!(out, "vars {} rows {} cones {}", self.n_vars(), self.n_rows(), self.cones.len())
            .unwrap();
        for cone in &self.cones {
            match cone {
                Cone::NonNegative(d) => writeln!(out, "cone nonneg {d}").unwrap(),
                Cone::SecondOrder(d) => writeln!(out, "cone soc {d}").unwrap(),
            }
        }
        writeln!(out, "A").unwrap();
        for i in 0..self.n_rows() {
            let mut dense = vec![0.0; self.n_vars()];
            for &(c, v) in self.a.row(i) {
                dense[c as usize] = v;
            }
            writeln!(out, "{}", join_floats(&dense)).unwrap();
        }
        writeln!(out, "b").unwrap();
        writeln!(out, "{}", join_floats(&self.b)).unwrap();
        writeln!(out, "c").unwrap();
        writeln!(out, "{}", join_floats(&self.c)).unwrap();
        out
    }

    pub fn load(text: &str) -> Result<Self, ProgramError> {
        let mut lines = text.lines().enumerate();
        let mut next_line = |what: &str| {
            lines
                .next()
                .ok_or_else(|| ProgramError::Parse { line: 0, msg: format!("missing {what}") })
        };
        let (ln, header) = next_line("header")?;
        if header.trim() != "drsafe-socp v1" {
            return Err(ProgramError::Parse { line: ln + 1, msg: "bad magic header".into() });
        }
        let (ln, dims) = next_line("dims")?;
        let parts: Vec<&str> = dims.split_whitespace().collect();
        let parse_dim = |idx: usize| -> Result<usize, ProgramError> {
            parts
                .get(idx)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ProgramError::Parse { line: ln + 1, msg: "bad dims line".into() })
        };
        if parts.len() != 6 || parts[0] != "vars" || parts[2] != "rows" || parts[4] != "cones" {
            return Err(ProgramError::Parse { line: ln + 1, msg: "bad dims line".into() });
        }
        let (n_vars, n_rows, n_cones) = (parse_dim(1)?, parse_dim(3)?, parse_dim(5)?);
        let mut cones = Vec::with_capacity(n_cones);
        for _ in 0..n_cones {
            let (ln, line) = next_line("cone")?;
            let p: Vec<&str> = line.split_whitespace().collect();
            let dim: usize = p
                .get(2)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ProgramError::Parse { line: ln + 1, msg: "bad cone line".into() })?;
            match (p.first().copied(), p.get(1).copied()) {
                (Some("cone"), Some("nonneg")) => cones.push(Cone::NonNegative(dim)),
                (Some("cone"), Some("soc")) => cones.push(Cone::SecondOrder(dim)),
                _ => return Err(ProgramError::Parse { line: ln + 1, msg: "bad cone line".into() }),
            }
        }
        let expect_tag = |pair: (usize, &str), tag: &str| -> Result<(), ProgramError> {
            if pair.1.trim() == tag {
                Ok(())
            } else {
                Err(ProgramError::Parse {
                    line: pair.0 + 1,
                    msg: format!("expected section '{tag}'"),
                })
            }
        };
        expect_tag(next_line("A")?, "A")?;
        let mut a = SparseRows::new(n_vars);
        for _ in 0..n_rows {
            let (ln, line) = next_line("A row")?;
            let vals = parse_floats(line, ln)?;
            if vals.len() != n_vars {
                return Err(ProgramError::Parse {
                    line: ln + 1,
                    msg: format!("expected {n_vars} entries, got {}", vals.len()),
                });
            }
            let entries: Vec<(usize, f64)> = vals.into_iter().enumerate().collect();
            a.push_row(&entries);
        }
        expect_tag(next_line("b")?, "b")?;
        let (ln, line) = next_line("b row")?;
        let b = parse_floats(line, ln)?;
        expect_tag(next_line("c")?, "c")?;
        let (ln, line) = next_line("c row")?;
        let c = parse_floats(line, ln)?;
        let prog = ConeProgram { c, a, b, cones };
        prog.validate()?;
        Ok(prog)
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats(line: &str, ln: usize) -> Result<Vec<f64>, ProgramError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| ProgramError::Parse {
                line: ln + 1,
                msg: format!("bad float '{tok}'"),
            })
        })
        .collect()
}

/// Incremental builder used by the problem-assembly code.
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    c: Vec<f64>,
    a: SparseRows,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProgramBuilder {
    pub fn new(n_vars: usize) -> Self {
        ProgramBuilder { c: vec![0.0; n_vars], a: SparseRows::new(n_vars), b: Vec::new(), cones: Vec::new() }
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.c[var] = coef;
    }

    /// One `b - A x >= 0` row.
    pub fn nonneg_row(&mut self, entries: &[(usize, f64)], b: f64) {
        self.a.push_row(entries);
        self.b.push(b);
        self.cones.push(Cone::NonNegative(1));
    }

    /// A second-order cone block; `rows[0]` is the top (norm bound) row.
    pub fn soc_block(&mut self, rows: Vec<(Vec<(usize, f64)>, f64)>) {
        let dim = rows.len();
        assert!(dim >= 1);
        for (entries, b) in rows {
            self.a.push_row(&entries);
            self.b.push(b);
        }
        self.cones.push(Cone::SecondOrder(dim));
    }

    pub fn finish(self) -> ConeProgram {
        ConeProgram { c: self.c, a: self.a, b: self.b, cones: self.cones }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_program() -> ConeProgram {
        let mut pb = ProgramBuilder::new(2);
        pb.set_objective(1, 1.0);
        pb.nonneg_row(&[(0, -1.0)], 1.0);
        pb.soc_block(vec![
            (vec![(1, -1.0)], 0.5),
            (vec![(0, 2.0)], -0.25),
        ]);
        pb.finish()
    }

    #[test]
    fn validate_accepts_builder_output() {
        toy_program().validate().unwrap();
    }

    #[test]
    fn validate_rejects_cone_dim_mismatch() {
        let mut p = toy_program();
        p.cones.push(Cone::NonNegative(1));
        assert!(matches!(p.validate(), Err(ProgramError::Malformed(_))));
    }

    #[test]
    fn dump_load_round_trip() {
        let p = toy_program();
        let q = ConeProgram::load(&p.dump()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn load_reports_line_numbers() {
        let p = toy_program();
        let mut text = p.dump();
        text = text.replace("cone soc 2", "cone soc two");
        match ConeProgram::load(&text) {
            Err(ProgramError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let p = toy_program();
        let x = [0.3, -1.7];
        let y = p.a.matvec(&x);
        // <A x, v> == <x, A^T v>
        let v = [2.0, -0.5, 1.5];
        let lhs: f64 = y.iter().zip(v).map(|(a, b)| a * b).sum();
        let aty = p.a.t_matvec(&v);
        let rhs: f64 = aty.iter().zip(x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
