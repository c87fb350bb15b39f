//! Gnuplot data + script emitter.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::table::{format_sig9, ResultTable, Value};

/// Writes `<stem>.dat` (whitespace-separated, one block per table) and
/// `<stem>.gp` plotting each `y` column against `x`.
pub fn write_gnuplot(table: &ResultTable, x: &str, ys: &[&str], stem: &Path) -> io::Result<(PathBuf, PathBuf)> {
    let missing = |c: &str| io::Error::new(io::ErrorKind::InvalidInput, format!("no column {c:?}"));
    let xi = table.column(x).ok_or_else(|| missing(x))?;
    let yi: Vec<usize> = ys
        .iter()
        .map(|c| table.column(c).ok_or_else(|| missing(c)))
        .collect::<io::Result<_>>()?;
    let dat = stem.with_extension("dat");
    let gp = stem.with_extension("gp");
    let mut data = format!("# {}\n", std::iter::once(x).chain(ys.iter().copied()).collect::<Vec<_>>().join(" "));
    for row in &table.rows {
        let cell = |v: &Value| match v {
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_sig9(*f),
            _ => "NaN".to_string(),
        };
        let mut line = vec![cell(&row[xi])];
        line.extend(yi.iter().map(|&i| cell(&row[i])));
        data.push_str(&line.join(" "));
        data.push('\n');
    }
    fs::write(&dat, data)?;
    let name = dat.file_name().and_then(|n| n.to_str()).unwrap_or("data.dat");
    let plots: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, c)| format!("'{name}' using 1:{} with linespoints title '{c}'", i + 2))
        .collect();
    let script = format!(
        "set datafile commentschars '#'\nset xlabel '{x}'\nset grid\nset key outside\nplot {}\n",
        plots.join(", \\\n     ")
    );
    fs::write(&gp, script)?;
    Ok((dat, gp))
}
