//! Shared output formatting.

use std::io::Write;

use crate::error::Result;

/// Fixed 17-significant-digit formatting so outputs diff cleanly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a CSV with the given header and pre-formatted rows.
pub fn write_rows<W: Write, I, R>(out: W, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.4), "4.0000000000000002e-1");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        let x = 1.0 / 3.0;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
