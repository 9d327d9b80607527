//! CSV event logs: `event_id,kind,timestamp,device,value,attributes`, with
//! attributes written as `key=value` pairs separated by `;`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use cookie_monster_core::{Database, DeviceId, EpochConfig, Event, EventId, EventKind, Fixed, ModelError};

pub const HEADER: [&str; 6] = ["event_id", "kind", "timestamp", "device", "value", "attributes"];

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("invalid event log: {0}")]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn parse_err(row: usize, message: impl Into<String>) -> LoadError {
    LoadError::Parse { row, message: message.into() }
}

fn parse_attributes(cell: &str, row: usize) -> Result<BTreeMap<String, String>, LoadError> {
    let mut out = BTreeMap::new();
    for pair in cell.split(';').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').ok_or_else(|| parse_err(row, format!("attribute `{pair}` is not key=value")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn format_attributes(attrs: &BTreeMap<String, String>) -> String {
    attrs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Parses an event log. Rows are numbered from 1 after the header.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<Event>, LoadError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let mut events = Vec::new();
    let mut last_ts = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() < 5 {
            return Err(parse_err(row, format!("expected at least 5 fields, found {}", rec.len())));
        }
        let id: u64 = rec[0].trim().parse().map_err(|_| parse_err(row, format!("bad event_id `{}`", &rec[0])))?;
        let kind = match rec[1].trim() {
            "impression" => EventKind::Impression,
            "conversion" => EventKind::Conversion,
            other => return Err(parse_err(row, format!("unknown kind `{other}`"))),
        };
        let timestamp: u64 = rec[2].trim().parse().map_err(|_| parse_err(row, format!("bad timestamp `{}`", &rec[2])))?;
        let device: u64 = rec[3].trim().parse().map_err(|_| parse_err(row, format!("bad device `{}`", &rec[3])))?;
        let value: Fixed = match rec[4].trim() {
            "" => Fixed::ZERO,
            v => v.parse().map_err(|e| parse_err(row, format!("bad value `{v}`: {e}")))?,
        };
        let attributes = parse_attributes(rec.get(5).unwrap_or(""), row)?;
        if timestamp < last_ts {
            log::warn!("row {row}: timestamp {timestamp} is earlier than the previous row");
        }
        last_ts = timestamp;
        let event = Event { id: EventId(id), kind, timestamp, device: DeviceId(device), attributes, value };
        event.validate().map_err(|e| parse_err(row, e.to_string()))?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_events<W: Write>(writer: W, events: &[Event]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for e in events {
        let kind = match e.kind {
            EventKind::Impression => "impression",
            EventKind::Conversion => "conversion",
        };
        w.write_record([
            e.id.0.to_string(),
            kind.to_string(),
            e.timestamp.to_string(),
            e.device.0.to_string(),
            e.value.to_string(),
            format_attributes(&e.attributes),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log file and partitions it into device-epoch records.
pub fn load_events(path: &Path, epochs: &EpochConfig) -> Result<Database, LoadError> {
    let file = File::open(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    let events = read_events(std::io::BufReader::new(file))?;
    Ok(Database::from_events(events, epochs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let events = vec![
            Event::impression(1, 5, DeviceId(2)).with_attr("campaign", "nike").with_attr("publisher", "news"),
            Event::conversion(2, 9, DeviceId(2), Fixed::from_raw(1_500_000_000)).with_attr("product", "nike"),
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("event_id,kind,timestamp,device,value,attributes\n"));
        assert_eq!(read_events(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn parse_errors_carry_row_numbers() {
        let text = "event_id,kind,timestamp,device,value,attributes\n1,impression,0,1,0,\n2,click,0,1,0,\n";
        match read_events(text.as_bytes()) {
            Err(LoadError::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "event_id,kind,timestamp,device,value,attributes\n1,impression,0,1,3,\n";
        assert!(matches!(read_events(text.as_bytes()), Err(LoadError::Parse { row: 1, .. })));
    }
}
