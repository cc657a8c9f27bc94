//! CSV files with a leading version tag line, `#hemopipe,<kind>,v1`.

use std::io::{BufRead, BufReader, Read, Write};

use crate::domain::{HemoSample, Led, SensorFrame};
use crate::dsp::FourChannelSeries;
use crate::error::{Error, Result};

pub const CSV_VERSION: &str = "v1";

pub fn tagged_writer<W: Write>(mut out: W, kind: &str) -> Result<csv::Writer<W>> {
    writeln!(out, "#hemopipe,{kind},{CSV_VERSION}")?;
    Ok(csv::Writer::from_writer(out))
}

pub fn tagged_reader<R: Read>(input: R, kind: &str) -> Result<csv::Reader<BufReader<R>>> {
    let mut buffered = BufReader::new(input);
    let mut tag = String::new();
    buffered.read_line(&mut tag)?;
    let fields: Vec<&str> = tag.trim_end().split(',').collect();
    match fields.as_slice() {
        ["#hemopipe", k, v] if *k == kind && *v == CSV_VERSION => {}
        ["#hemopipe", k, v] if *k == kind => {
            return Err(Error::Format(format!("unsupported {kind} CSV version {v:?}")));
        }
        _ => return Err(Error::Format(format!("missing #hemopipe,{kind},{CSV_VERSION} tag line"))),
    }
    Ok(csv::Reader::from_reader(buffered))
}

pub fn parse_f64(field: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Format(format!("bad number {field:?}")))
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema(format!("expected columns {}", expected.join(","))));
    }
    Ok(())
}

const FRAME_COLUMNS: [&str; 7] = ["t", "led", "x", "y", "z", "ir1", "ir2"];

pub fn write_frames<W: Write>(out: W, frames: &[SensorFrame]) -> Result<()> {
    let mut w = tagged_writer(out, "frames")?;
    w.write_record(FRAME_COLUMNS)?;
    for f in frames {
        let led = match f.led {
            Led::White => "white",
            Led::Nir => "nir",
        };
        w.write_record([
            f.t.to_string(),
            led.to_string(),
            f.x.to_string(),
            f.y.to_string(),
            f.z.to_string(),
            f.ir1.to_string(),
            f.ir2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames<R: Read>(input: R) -> Result<Vec<SensorFrame>> {
    let mut r = tagged_reader(input, "frames")?;
    check_header(&mut r, &FRAME_COLUMNS)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let led = match &rec[1] {
                "white" => Led::White,
                "nir" => Led::Nir,
                other => return Err(Error::Format(format!("unknown led {other:?}"))),
            };
            Ok(SensorFrame {
                t: parse_f64(&rec[0])?,
                led,
                x: parse_f64(&rec[2])?,
                y: parse_f64(&rec[3])?,
                z: parse_f64(&rec[4])?,
                ir1: parse_f64(&rec[5])?,
                ir2: parse_f64(&rec[6])?,
            })
        })
        .collect()
}

/// Processed output: four-channel series plus the optical-density changes.
#[derive(Debug, Clone, PartialEq)]
pub struct HemoTable {
    pub series: FourChannelSeries,
    pub dd_l1: Vec<f64>,
    pub dd_l2: Vec<f64>,
}

impl HemoTable {
    pub fn samples(&self) -> impl Iterator<Item = HemoSample> + '_ {
        (0..self.series.len()).map(move |k| HemoSample {
            t: self.series.times[k],
            dd_l1: self.dd_l1[k],
            dd_l2: self.dd_l2[k],
            d_chbo2: self.series.d_chbo2[k],
            d_chb: self.series.d_chb[k],
        })
    }
}

const HEMO_COLUMNS: [&str; 7] = ["t", "ir1", "ir2", "dd_l1", "dd_l2", "d_chbo2", "d_chb"];

pub fn write_hemo<W: Write>(out: W, table: &HemoTable) -> Result<()> {
    table.series.validate()?;
    let mut w = tagged_writer(out, "hemo")?;
    w.write_record(HEMO_COLUMNS)?;
    let s = &table.series;
    for k in 0..s.len() {
        w.write_record(
            [s.times[k], s.ir1[k], s.ir2[k], table.dd_l1[k], table.dd_l2[k], s.d_chbo2[k], s.d_chb[k]]
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hemo<R: Read>(input: R, sample_rate_hz: f64) -> Result<HemoTable> {
    let mut r = tagged_reader(input, "hemo")?;
    check_header(&mut r, &HEMO_COLUMNS)?;
    let mut cols: [Vec<f64>; 7] = Default::default();
    for rec in r.records() {
        let rec = rec?;
        for (i, col) in cols.iter_mut().enumerate() {
            col.push(parse_f64(&rec[i])?);
        }
    }
    let [times, ir1, ir2, dd_l1, dd_l2, d_chbo2, d_chb] = cols;
    let series = FourChannelSeries { times, ir1, ir2, d_chbo2, d_chb, sample_rate_hz };
    series.validate()?;
    Ok(HemoTable { series, dd_l1, dd_l2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let frames = vec![SensorFrame::white(0.1, 1.5, 2.0, 3.0), SensorFrame::nir(0.2, 1e4 / 3.0, 2.0)];
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        assert!(buf.starts_with(b"#hemopipe,frames,v1\n"));
        assert_eq!(read_frames(buf.as_slice()).unwrap(), frames);
    }

    #[test]
    fn wrong_kind_or_version() {
        assert!(matches!(read_frames("#hemopipe,hemo,v1\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_frames("#hemopipe,frames,v2\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_frames("t,led\n".as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn hemo_round_trip() {
        let series = FourChannelSeries {
            times: vec![0.0, 1.0 / 7.0],
            ir1: vec![100.0, 99.5],
            ir2: vec![200.0, 201.0],
            d_chbo2: vec![0.0, 1e-5],
            d_chb: vec![0.0, -3e-6],
            sample_rate_hz: 7.0,
        };
        let table = HemoTable { series, dd_l1: vec![0.0, 0.1], dd_l2: vec![0.0, -0.2] };
        let mut buf = Vec::new();
        write_hemo(&mut buf, &table).unwrap();
        assert_eq!(read_hemo(buf.as_slice(), 7.0).unwrap(), table);
        assert_eq!(table.samples().nth(1).unwrap().d_chb, -3e-6);
    }
}
