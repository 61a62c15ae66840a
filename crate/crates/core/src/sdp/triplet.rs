//! Plain-text sparse triplet dump of an [`SdpProblem`].
//!
//! ```text
//! # comment lines start with '#'
//! vars <count>
//! var <name> <rows> <cols> <sym|full>        one line per variable, in order
//! blocks <count>
//! block <dim> <strict|nonstrict>             one line per constraint, in order
//! objective <yes|no>
//! <block> <row> <col> <coefficient> <entry>  body, one line per nonzero
//! ```
//!
//! Body lines describe `F_j(x) = F_j0 + Σ_k x_k F_jk` entry by entry. Blocks
//! are numbered from 1; block 0 is the 1×1 objective. `entry` 0 is the
//! constant term and `entry = k + 1` the coefficient of scalar unknown `k`,
//! scalars being laid out variable by variable (row-major upper triangle for
//! symmetric variables, row-major for full ones). Only the upper triangle
//! (`row ≤ col`, zero based) of each symmetric block is written.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::{AffineExpr, SdpProblem};

pub fn write_triplets(problem: &SdpProblem) -> String {
    let mut out = String::new();
    out.push_str("# sparse SDP triplets: block row col coefficient entry\n");
    let _ = writeln!(out, "vars {}", problem.vars().len());
    for v in problem.vars() {
        let (r, c) = v.handle.shape();
        let kind = if v.handle.is_symmetric() { "sym" } else { "full" };
        let _ = writeln!(
            out,
            "var {} {} {} {}",
            v.name.replace(char::is_whitespace, "_"),
            r,
            c,
            kind
        );
    }
    let _ = writeln!(out, "blocks {}", problem.constraints().len());
    for c in problem.constraints() {
        let kind = if c.strict { "strict" } else { "nonstrict" };
        let _ = writeln!(out, "block {} {}", c.expr.rows(), kind);
    }
    let _ = writeln!(
        out,
        "objective {}",
        if problem.objective().is_some() { "yes" } else { "no" }
    );
    let mut emit = |block: usize, e: &AffineExpr| {
        let mut parts: Vec<(usize, &Mat)> = vec![(0, e.constant_part())];
        parts.extend(e.terms().iter().map(|(&k, m)| (k + 1, m)));
        for (entry, m) in parts {
            for i in 0..m.nrows() {
                for j in i..m.ncols() {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{block} {i} {j} {v:e} {entry}");
                    }
                }
            }
        }
    };
    if let Some(obj) = problem.objective() {
        emit(0, obj);
    }
    for (j, c) in problem.constraints().iter().enumerate() {
        emit(j + 1, &c.expr);
    }
    out
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("triplet line {line}: {msg}"))
}

pub fn parse_triplets(text: &str) -> Result<SdpProblem> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::Invalid(format!("triplet file ended before {what}")))
    };
    let header = |(ln, l): (usize, &str), key: &str| -> Result<Vec<String>> {
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(bad(ln, format!("expected '{key}'")));
        }
        Ok(it.map(str::to_string).collect())
    };
    let num = |ln: usize, s: &str| -> Result<usize> { s.parse().map_err(|_| bad(ln, format!("bad integer '{s}'"))) };

    let mut problem = SdpProblem::new();
    let l = next("vars")?;
    let nvars = num(l.0, header(l, "vars")?.first().map(String::as_str).unwrap_or(""))?;
    for _ in 0..nvars {
        let l = next("var")?;
        let f = header(l, "var")?;
        if f.len() != 4 {
            return Err(bad(l.0, "var needs name rows cols kind"));
        }
        let (r, c) = (num(l.0, &f[1])?, num(l.0, &f[2])?);
        match f[3].as_str() {
            "sym" if r == c => {
                problem.sym_var(&f[0], r);
            }
            "full" => {
                problem.full_var(&f[0], r, c);
            }
            k => return Err(bad(l.0, format!("bad variable kind '{k}'"))),
        }
    }
    let l = next("blocks")?;
    let nblocks = num(l.0, header(l, "blocks")?.first().map(String::as_str).unwrap_or(""))?;
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let l = next("block")?;
        let f = header(l, "block")?;
        if f.len() != 2 {
            return Err(bad(l.0, "block needs dim and kind"));
        }
        let strict = match f[1].as_str() {
            "strict" => true,
            "nonstrict" => false,
            k => return Err(bad(l.0, format!("bad block kind '{k}'"))),
        };
        blocks.push((num(l.0, &f[0])?, strict));
    }
    let l = next("objective")?;
    let has_obj = match header(l, "objective")?.first().map(String::as_str) {
        Some("yes") => true,
        Some("no") => false,
        _ => return Err(bad(l.0, "objective must be yes or no")),
    };

    let n = problem.n_scalars();
    let dims: Vec<usize> = std::iter::once(1).chain(blocks.iter().map(|b| b.0)).collect();
    let mut parts: Vec<(Mat, BTreeMap<usize, Mat>)> =
        dims.iter().map(|&d| (Mat::zeros(d, d), BTreeMap::new())).collect();
    for (ln, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(ln, "body line needs 5 fields"));
        }
        let (b, i, j) = (num(ln, f[0])?, num(ln, f[1])?, num(ln, f[2])?);
        let v: f64 = f[3]
            .parse()
            .map_err(|_| bad(ln, format!("bad coefficient '{}'", f[3])))?;
        let entry = num(ln, f[4])?;
        if b >= dims.len() || (b == 0 && !has_obj) {
            return Err(bad(ln, format!("block {b} not declared")));
        }
        let d = dims[b];
        if i >= d || j >= d {
            return Err(bad(ln, format!("index ({i},{j}) outside block of size {d}")));
        }
        if entry > n {
            return Err(bad(ln, format!("entry {entry} exceeds {n} scalar unknowns")));
        }
        let m = if entry == 0 {
            &mut parts[b].0
        } else {
            parts[b].1.entry(entry - 1).or_insert_with(|| Mat::zeros(d, d))
        };
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    let mut parts = parts.into_iter();
    let (c0, t0) = parts.next().expect("objective slot");
    if has_obj {
        problem.minimize(AffineExpr::from_parts(c0, t0))?;
    }
    for (k, ((c, t), (_, strict))) in parts.zip(blocks).enumerate() {
        let expr = AffineExpr::from_parts(c, t);
        let name = format!("block{}", k + 1);
        if strict {
            problem.add_lmi(&name, expr)?;
        } else {
            problem.add_lmi_nonstrict(&name, expr)?;
        }
    }
    Ok(problem)
}
