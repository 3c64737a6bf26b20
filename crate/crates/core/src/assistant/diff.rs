// Line-level diff using longest common subsequence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffOp {
    Keep,
    Delete,
    Insert,
}

/// A run of consecutive lines sharing one operation. Lines keep their `\n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub op: DiffOp,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDiff {
    pub hunks: Vec<Hunk>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("diff does not match base at line {0}")]
    Mismatch(usize),
    #[error("diff consumed {consumed} of {total} base lines")]
    Incomplete { consumed: usize, total: usize },
}

impl EditDiff {
    pub fn inserted_lines(&self) -> usize {
        self.count(DiffOp::Insert)
    }

    pub fn deleted_lines(&self) -> usize {
        self.count(DiffOp::Delete)
    }

    fn count(&self, op: DiffOp) -> usize {
        self.hunks
            .iter()
            .filter(|h| h.op == op)
            .map(|h| h.lines.len())
            .sum()
    }

    pub fn is_identity(&self) -> bool {
        self.inserted_lines() == 0 && self.deleted_lines() == 0
    }

    /// Applies the diff to `base`, checking every kept and deleted line.
    pub fn apply(&self, base: &str) -> Result<String, DiffError> {
        let base_lines: Vec<&str> = base.split_inclusive('\n').collect();
        let mut pos = 0;
        let mut out = String::with_capacity(base.len());
        for hunk in &self.hunks {
            for line in &hunk.lines {
                match hunk.op {
                    DiffOp::Insert => out.push_str(line),
                    DiffOp::Keep | DiffOp::Delete => {
                        if base_lines.get(pos) != Some(&line.as_str()) {
                            return Err(DiffError::Mismatch(pos));
                        }
                        if hunk.op == DiffOp::Keep {
                            out.push_str(line);
                        }
                        pos += 1;
                    }
                }
            }
        }
        if pos != base_lines.len() {
            return Err(DiffError::Incomplete {
                consumed: pos,
                total: base_lines.len(),
            });
        }
        Ok(out)
    }

    fn push(&mut self, op: DiffOp, line: &str) {
        match self.hunks.last_mut() {
            Some(h) if h.op == op => h.lines.push(line.to_string()),
            _ => self.hunks.push(Hunk {
                op,
                lines: vec![line.to_string()],
            }),
        }
    }
}

/// Diffs two documents line by line. Deletions precede insertions within a
/// changed region.
pub fn diff_documents(base: &str, proposed: &str) -> EditDiff {
    let a: Vec<&str> = base.split_inclusive('\n').collect();
    let b: Vec<&str> = proposed.split_inclusive('\n').collect();

    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let a_mid = &a[prefix..a.len() - suffix];
    let b_mid = &b[prefix..b.len() - suffix];

    let n = a_mid.len();
    let m = b_mid.len();
    // lcs[i][j] = LCS length of a_mid[i..] and b_mid[j..]
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a_mid[i] == b_mid[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }

    let mut diff = EditDiff::default();
    for line in &a[..prefix] {
        diff.push(DiffOp::Keep, line);
    }
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a_mid[i] == b_mid[j] {
            diff.push(DiffOp::Keep, a_mid[i]);
            i += 1;
            j += 1;
        } else if i < n && (j == m || lcs[i + 1][j] >= lcs[i][j + 1]) {
            diff.push(DiffOp::Delete, a_mid[i]);
            i += 1;
        } else {
            diff.push(DiffOp::Insert, b_mid[j]);
            j += 1;
        }
    }
    for line in &a[a.len() - suffix..] {
        diff.push(DiffOp::Keep, line);
    }
    diff
}
