//! SDPA sparse format (`.dat-s`).
//!
//! SDPA states its primal as `min c^T x s.t. sum_i F_i x_i - F_0 >= 0` and its
//! dual as `max <F_0, Y> s.t. <F_i, Y> = c_i, Y >= 0`. An [`SdpProblem`] maps
//! onto the SDPA dual with `Y = X`, `F_i = A_i`, `c = b` and `F_0 = -C`.
//!
//! Layout written by [`write_sdpa`], one field group per line:
//!
//! 1. a comment line starting with `"`
//! 2. `m`, the number of constraints
//! 3. the number of blocks
//! 4. block sizes separated by spaces; diagonal blocks are negative
//! 5. `b_1 ... b_m`
//! 6. one line `mat blk i j value` per nonzero upper-triangular entry, 1-based,
//!    sorted by `(mat, blk, i, j)` with `mat = 0` for `F_0`
//!
//! Numbers use Rust's shortest round-trip `{:e}` formatting, so writing and
//! reading a problem reproduces every `f64` bit for bit. The reader also accepts
//! the looser files produced by other tools: `*` comments, `{`, `}`, `(`, `)`,
//! `,` as separators and lower-triangular entries.

use std::fmt::Write as _;

use crate::problem::{BlockKind, SdpProblem, SparseSym};
use crate::SdpError;

pub fn write_sdpa(prob: &SdpProblem) -> String {
    let mut out = String::new();
    out.push_str("\"ddsos semidefinite program (primal standard form, F0 = -C)\n");
    let _ = writeln!(out, "{}", prob.constraints.len());
    let _ = writeln!(out, "{}", prob.blocks.len());
    let sizes: Vec<String> = prob
        .blocks
        .iter()
        .map(|k| match k {
            BlockKind::Psd(n) => format!("{n}"),
            BlockKind::Diag(n) => format!("-{n}"),
        })
        .collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let b: Vec<String> = prob.b.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "{}", b.join(" "));
    for e in prob.c.entries() {
        let _ = writeln!(out, "0 {} {} {} {:e}", e.block + 1, e.row + 1, e.col + 1, -e.value);
    }
    for (k, a) in prob.constraints.iter().enumerate() {
        for e in a.entries() {
            let _ = writeln!(out, "{} {} {} {} {:e}", k + 1, e.block + 1, e.row + 1, e.col + 1, e.value);
        }
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> SdpError {
    SdpError::Parse { line, message: msg.into() }
}

pub fn read_sdpa(text: &str) -> Result<SdpProblem, SdpError> {
    // Tokenize, remembering the line each token came from.
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim_start();
        if t.starts_with('"') || t.starts_with('*') {
            continue;
        }
        for tok in line.split(|c: char| c.is_whitespace() || "{}(),".contains(c)) {
            if !tok.is_empty() {
                tokens.push((ln + 1, tok));
            }
        }
    }
    let mut it = tokens.into_iter();
    let mut next = |what: &str| it.next().ok_or_else(|| parse_err(0, format!("unexpected end of file reading {what}")));

    let (ln, tok) = next("constraint count")?;
    let m: usize = tok.parse().map_err(|_| parse_err(ln, format!("bad constraint count {tok:?}")))?;
    let (ln, tok) = next("block count")?;
    let nblocks: usize = tok.parse().map_err(|_| parse_err(ln, format!("bad block count {tok:?}")))?;
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let (ln, tok) = next("block size")?;
        let v: i64 = tok.parse().map_err(|_| parse_err(ln, format!("bad block size {tok:?}")))?;
        if v == 0 {
            return Err(parse_err(ln, "zero block size"));
        }
        blocks.push(if v > 0 {
            BlockKind::Psd(v as usize)
        } else {
            BlockKind::Diag(v.unsigned_abs() as usize)
        });
    }
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        let (ln, tok) = next("right-hand side")?;
        b.push(tok.parse::<f64>().map_err(|_| parse_err(ln, format!("bad number {tok:?}")))?);
    }

    let mut c = SparseSym::new();
    let mut a: Vec<SparseSym> = vec![SparseSym::new(); m];
    loop {
        let Some((ln, tok)) = it.next() else { break };
        let mut fields = [0usize; 4];
        fields[0] = tok.parse().map_err(|_| parse_err(ln, format!("bad matrix index {tok:?}")))?;
        for f in fields.iter_mut().skip(1) {
            let (l2, t2) = it.next().ok_or_else(|| parse_err(ln, "truncated entry"))?;
            *f = t2.parse().map_err(|_| parse_err(l2, format!("bad index {t2:?}")))?;
        }
        let (l2, t2) = it.next().ok_or_else(|| parse_err(ln, "truncated entry"))?;
        let value: f64 = t2.parse().map_err(|_| parse_err(l2, format!("bad value {t2:?}")))?;
        let [mat, blk, i, j] = fields;
        if blk == 0 || blk > nblocks || i == 0 || j == 0 {
            return Err(parse_err(ln, "index out of range"));
        }
        let kind = blocks[blk - 1];
        if i > kind.dim() || j > kind.dim() {
            return Err(parse_err(ln, format!("entry ({i}, {j}) outside block {blk}")));
        }
        if matches!(kind, BlockKind::Diag(_)) && i != j {
            return Err(parse_err(ln, "off-diagonal entry in a diagonal block"));
        }
        if mat == 0 {
            c.push(blk - 1, i - 1, j - 1, -value);
        } else if mat <= m {
            a[mat - 1].push(blk - 1, i - 1, j - 1, value);
        } else {
            return Err(parse_err(ln, format!("matrix index {mat} exceeds {m}")));
        }
    }
    c.canonicalize();
    for ai in &mut a {
        ai.canonicalize();
    }
    Ok(SdpProblem { blocks, c, constraints: a, b })
}
