//! Matrix CSV serialization: one row per line, comma separated, `.` decimal
//! point, no header. Values are written in Rust's shortest round-trip form,
//! so `write -> read` reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn write_matrix_csv<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    let mut line = String::new();
    for r in 0..m.rows() {
        line.clear();
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            write!(line, "{v}").expect("write to string");
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(r: R) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                line: idx + 1,
                msg: format!("bad float {field:?}: {e}"),
            })?;
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {c} fields, got {n}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn save_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_matrix_csv(m, std::io::BufWriter::new(file))
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let file = std::fs::File::open(path)?;
    read_matrix_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(77);
        let m = Matrix::random_uniform(5, 3, -1e3, 1e3, &mut rng);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn format_is_plain_rows() {
        let m = Matrix::from_vec(2, 2, vec![1.0, -0.5, 2.25, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,-0.5\n2.25,3\n");
    }

    #[test]
    fn rejects_ragged_rows() {
        let text = "1,2\n3\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn rejects_bad_floats() {
        let text = "1,zzz\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
    }
}
