//! CSV readers and writers for every file format the crate exchanges.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::ConsumptionRecord;

pub const RECORD_HEADER: [&str; 5] = ["period", "customer_id", "own_award", "count", "demand"];

pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(input: R) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(File::create(path)?, rows)
}

/// Opens an input file; a missing or unreadable input is a data error.
pub fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_rows(open_input(path)?)
}

/// Writes records in the `period,customer_id,own_award,count,demand` schema.
/// The header is written even for an empty log.
pub fn write_records(path: &Path, records: &[ConsumptionRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(File::create(path)?);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a record file against `num_awards` own awards.
pub fn read_records(path: &Path, num_awards: usize) -> Result<Vec<ConsumptionRecord>> {
    let file = open_input(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = r.headers()?.clone();
    if headers.iter().ne(RECORD_HEADER.iter().copied()) {
        return Err(Error::Data(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            RECORD_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: ConsumptionRecord = row?;
        rec.validate(num_awards)?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_keep_empty_demand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![
            ConsumptionRecord { period: 1, customer: 3, own_award: 2, count: 4, demand: Some(9) },
            ConsumptionRecord { period: 2, customer: 3, own_award: 0, count: 1, demand: None },
        ];
        write_records(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "period,customer_id,own_award,count,demand\n1,3,2,4,9\n2,3,0,1,\n");
        assert_eq!(read_records(&path, 5).unwrap(), recs);
    }

    #[test]
    fn bad_records_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "period,customer_id,own_award,count,demand\n1,0,1,5,3\n").unwrap();
        assert!(matches!(read_records(&path, 5), Err(Error::InvalidRecord(_))));
        std::fs::write(&path, "period,customer,own_award,count,demand\n").unwrap();
        assert!(matches!(read_records(&path, 5), Err(Error::Data(_))));
    }
}
