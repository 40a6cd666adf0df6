//! Regeneration of golden Green values.

use std::io::Write;

use interlace_core::green::GreenTable;

use crate::error::{CliError, Context, Result};
use crate::output::{num, Table};

/// `g(x)` for every offset `extent >= x_1 >= x_2 >= ... >= x_d >= 0`, which
/// covers all offsets up to symmetry.
pub fn green_table(dim: usize, extent: u32, tol: f64) -> Result<Table> {
    if dim < 3 {
        return Err(CliError::Validation(vec![format!("d = {dim}: the walk must be transient, need d >= 3")]));
    }
    let table =
        GreenTable::compute(dim, extent, tol).during("green_table", || format!("d = {dim}, extent = {extent}"))?;
    let header: Vec<&'static str> =
        ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8"].into_iter().take(dim).chain(std::iter::once("g")).collect();
    if header.len() != dim + 1 {
        return Err(CliError::Validation(vec![format!("golden tables support d <= 8, got {dim}")]));
    }
    let mut out = Table::new("green_golden", &header);
    let mut x = vec![0i64; dim];
    loop {
        let g = table.get(&x).expect("offset within the computed extent");
        out.push(x.iter().map(|c| c.to_string()).chain(std::iter::once(num(g))).collect());
        // Next non-increasing tuple in lexicographic order.
        let Some(j) = (0..dim).rev().find(|&j| x[j] < if j == 0 { extent as i64 } else { x[j - 1] }) else {
            break;
        };
        x[j] += 1;
        x[j + 1..].iter_mut().for_each(|c| *c = 0);
    }
    Ok(out)
}

pub fn write_table(table: &Table, out: &mut impl Write) -> Result<()> {
    out.write_all(&table.to_bytes()?).map_err(|e| CliError::io("stdout", e))
}
