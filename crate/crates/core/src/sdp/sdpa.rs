//! SDPA sparse (`.dat-s`) reader and writer.
//!
//! Layout: number of constraints, number of blocks, block sizes, the
//! right-hand side `b`, then one `cons block i j value` line per stored
//! upper-triangle entry with `cons = 0` for the objective. Indices are
//! 1-based. A negative block size marks the free block, at most one.
//!
//! The objective sense is minimization of ⟨C, X⟩ subject to ⟨A_i, X⟩ = b_i.

use std::fmt::Write;

use super::{Entry, SdpError, SdpProblem};

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn export_sdpa(p: &SdpProblem) -> String {
    let mut out = String::new();
    let npsd = p.psd_sizes().len();
    let has_free = p.nfree() > 0;
    let nblocks = npsd + usize::from(has_free);
    writeln!(out, "{}", p.num_constraints()).unwrap();
    writeln!(out, "{nblocks}").unwrap();
    let mut sizes: Vec<String> = p.psd_sizes().iter().map(|s| s.to_string()).collect();
    if has_free {
        sizes.push(format!("-{}", p.nfree()));
    }
    writeln!(out, "{}", sizes.join(" ")).unwrap();
    let b: Vec<String> = p.rhs().iter().map(|&v| fmt_num(v)).collect();
    writeln!(out, "{}", b.join(" ")).unwrap();
    let write_entries = |out: &mut String, k: usize, entries: &[Entry]| {
        for e in entries {
            writeln!(
                out,
                "{} {} {} {} {}",
                k,
                e.block + 1,
                e.row + 1,
                e.col + 1,
                fmt_num(e.value)
            )
            .unwrap();
        }
    };
    write_entries(&mut out, 0, p.objective());
    for (i, a) in p.constraints().iter().enumerate() {
        write_entries(&mut out, i + 1, a);
    }
    out
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let t = line.trim_start();
            if t.starts_with('%') || t.starts_with('*') || t.starts_with('"') {
                continue;
            }
            for tok in line.split(|c: char| c.is_whitespace() || "{}(),".contains(c)) {
                if !tok.is_empty() {
                    items.push((ln + 1, tok));
                }
            }
        }
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(1, |t| t.0)
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, SdpError> {
        let line = self.line();
        let (ln, tok) = *self.items.get(self.pos).ok_or_else(|| SdpError::Parse {
            line,
            message: format!("unexpected end of file, expected {what}"),
        })?;
        self.pos += 1;
        tok.parse().map_err(|_| SdpError::Parse {
            line: ln,
            message: format!("expected {what}, found `{tok}`"),
        })
    }

    fn done(&self) -> bool {
        self.pos >= self.items.len()
    }
}

pub fn import_sdpa(text: &str) -> Result<SdpProblem, SdpError> {
    let mut t = Tokens::new(text);
    let m: usize = t.next("constraint count")?;
    let nblocks: usize = t.next("block count")?;
    let header_line = t.line();
    let mut raw = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        raw.push(t.next::<i64>("block size")?);
    }
    let nfree_blocks = raw.iter().filter(|&&s| s < 0).count();
    if nfree_blocks > 1 || raw.contains(&0) {
        return Err(SdpError::Parse {
            line: header_line,
            message: "block sizes must be nonzero with at most one free block".into(),
        });
    }
    // File block index -> internal block index.
    let mut map = Vec::with_capacity(nblocks);
    let mut psd_sizes = Vec::new();
    let mut nfree = 0;
    for &s in &raw {
        if s > 0 {
            map.push(psd_sizes.len());
            psd_sizes.push(s as usize);
        } else {
            map.push(usize::MAX);
            nfree = s.unsigned_abs() as usize;
        }
    }
    let free_idx = psd_sizes.len();
    for slot in &mut map {
        if *slot == usize::MAX {
            *slot = free_idx;
        }
    }
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        b.push(t.next::<f64>("right-hand side value")?);
    }
    let mut entries: Vec<Vec<Entry>> = vec![Vec::new(); m + 1];
    while !t.done() {
        let line = t.line();
        let k: usize = t.next("constraint index")?;
        let blk: usize = t.next("block index")?;
        let i: usize = t.next("row index")?;
        let j: usize = t.next("column index")?;
        let v: f64 = t.next("value")?;
        let err = |message: String| SdpError::Parse { line, message };
        if k > m {
            return Err(err(format!("constraint {k} out of range")));
        }
        if blk == 0 || blk > nblocks {
            return Err(err(format!("block {blk} out of range")));
        }
        let size = raw[blk - 1].unsigned_abs() as usize;
        if i == 0 || j == 0 || i > size || j > size {
            return Err(err(format!("index ({i}, {j}) outside block {blk}")));
        }
        let internal = map[blk - 1];
        if internal == free_idx && i != j {
            return Err(err("free block entries must be diagonal".into()));
        }
        entries[k].push(Entry::new(internal, i - 1, j - 1, v));
    }
    let mut p = SdpProblem::new(psd_sizes, nfree);
    let mut it = entries.into_iter();
    p.set_objective(it.next().unwrap_or_default())?;
    for (a, bi) in it.zip(b) {
        p.add_constraint(a, bi)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SdpProblem {
        let mut p = SdpProblem::new(vec![2], 0);
        p.set_objective(vec![Entry::new(0, 0, 0, 0.5), Entry::new(0, 1, 1, 0.5)])
            .unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 1, 0.5)], 1.0).unwrap();
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(0, 1, 1, -1.0)], 0.0)
            .unwrap();
        p
    }

    #[test]
    fn exact_layout() {
        let text = export_sdpa(&sample());
        let expected = "2\n1\n2\n1.0000000000000000e0 0.0000000000000000e0\n\
            0 1 1 1 5.0000000000000000e-1\n\
            0 1 2 2 5.0000000000000000e-1\n\
            1 1 1 2 5.0000000000000000e-1\n\
            2 1 1 1 1.0000000000000000e0\n\
            2 1 2 2 -1.0000000000000000e0\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn round_trip_with_free_block() {
        let mut p = SdpProblem::new(vec![3, 1], 2);
        p.set_objective(vec![Entry::new(2, 1, 1, 1.0)]).unwrap();
        p.add_constraint(
            vec![
                Entry::new(0, 0, 2, 0.1),
                Entry::new(1, 0, 0, 1.0 / 3.0),
                Entry::new(2, 0, 0, -1e-300),
            ],
            std::f64::consts::PI,
        )
        .unwrap();
        let text = export_sdpa(&p);
        assert!(text.lines().nth(2) == Some("3 1 -2"));
        let q = import_sdpa(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(export_sdpa(&q), text);
    }

    #[test]
    fn empty_free_block_omitted() {
        let text = export_sdpa(&sample());
        assert_eq!(text.lines().nth(1), Some("1"));
        assert!(!text.lines().nth(2).unwrap().contains('-'));
    }

    #[test]
    fn accepts_comments_and_punctuation() {
        let text = "\"a comment\n* another\n1\n1\n{2}\n(1.0)\n0 1 1 1 1\n1 1 1 2 0.5\n";
        let p = import_sdpa(text).unwrap();
        assert_eq!(p.num_constraints(), 1);
        assert_eq!(p.psd_sizes(), &[2]);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "1\n1\n2\n1.0\n1 1 3 1 1.0\n";
        match import_sdpa(text) {
            Err(SdpError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        match import_sdpa("1\n1\n2\nabc\n") {
            Err(SdpError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
