//! CSV serialization of run traces.
//!
//! Each run is written as two files: the per-tick states file and the
//! per-packet timing file. Floats use Rust's shortest round-trip
//! formatting, so reading a file back reproduces every value bit for bit.

use std::io::{Read, Write};

use crate::model::{Direction, JointVector, SimTime, DOF};
use crate::sim::{PacketRecord, TickRecord};
use crate::{Error, Result};

const STATE_GROUPS: [&str; 6] = ["q_l", "qd_l", "q_f", "qd_f", "tau_l", "tau_f"];

pub const PACKET_HEADER: [&str; 6] = ["direction", "seq", "sent_at_us", "t_send_us", "t_recv_us", "deliver_at_us"];

pub fn state_header() -> Vec<String> {
    let mut h = vec!["t_us".to_string()];
    for g in STATE_GROUPS {
        h.extend((0..DOF).map(|i| format!("{g}_{i}")));
    }
    h
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_states<W: Write>(w: W, ticks: &[TickRecord]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(state_header())?;
    let mut row: Vec<String> = Vec::with_capacity(1 + 6 * DOF);
    for t in ticks {
        row.clear();
        row.push(t.t.0.to_string());
        for v in [t.q_leader, t.qdot_leader, t.q_follower, t.qdot_follower, t.tau_leader, t.tau_follower] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_packets<W: Write>(w: W, packets: &[PacketRecord]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(PACKET_HEADER)?;
    for p in packets {
        out.write_record([
            p.direction.as_str().to_string(),
            p.seq.to_string(),
            p.sent_at.0.to_string(),
            p.t_send_us.to_string(),
            p.t_recv_us.to_string(),
            p.deliver_at.0.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[String]) -> Result<()> {
    let header = rdr.headers()?;
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::TraceFormat {
            line: 1,
            reason: format!("unexpected header (expected {} columns starting {:?})", expected.len(), expected.first()),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::TraceFormat {
        line,
        reason: format!("missing column {idx}"),
    })?;
    raw.parse().map_err(|_| Error::TraceFormat {
        line,
        reason: format!("cannot parse column {idx} value {raw:?}"),
    })
}

pub fn read_states<R: Read>(r: R) -> Result<Vec<TickRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &state_header())?;
    let mut ticks = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let t = SimTime(field(&rec, 0, line)?);
        let mut vecs = [JointVector::ZERO; 6];
        for (g, v) in vecs.iter_mut().enumerate() {
            let mut a = [0.0; DOF];
            for (i, x) in a.iter_mut().enumerate() {
                *x = field(&rec, 1 + g * DOF + i, line)?;
            }
            *v = JointVector::new(a).map_err(|e| Error::TraceFormat {
                line,
                reason: e.to_string(),
            })?;
        }
        if let Some(prev) = ticks.last().map(|p: &TickRecord| p.t) {
            if t < prev {
                return Err(Error::TraceFormat {
                    line,
                    reason: "time goes backwards".into(),
                });
            }
        }
        ticks.push(TickRecord {
            t,
            q_leader: vecs[0],
            qdot_leader: vecs[1],
            q_follower: vecs[2],
            qdot_follower: vecs[3],
            tau_leader: vecs[4],
            tau_follower: vecs[5],
        });
    }
    Ok(ticks)
}

pub fn read_packets<R: Read>(r: R) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let expected: Vec<String> = PACKET_HEADER.iter().map(|s| s.to_string()).collect();
    check_header(&mut rdr, &expected)?;
    let mut packets = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let direction: Direction = rec
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|e: Error| Error::TraceFormat {
                line,
                reason: e.to_string(),
            })?;
        packets.push(PacketRecord {
            direction,
            seq: field(&rec, 1, line)?,
            sent_at: SimTime(field(&rec, 2, line)?),
            t_send_us: field(&rec, 3, line)?,
            t_recv_us: field(&rec, 4, line)?,
            deliver_at: SimTime(field(&rec, 5, line)?),
        });
    }
    Ok(packets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, ScenarioConfig};
    use crate::transport::TransportKind;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let h = state_header();
        assert_eq!(h.len(), 43);
        assert_eq!(h[0], "t_us");
        assert_eq!(h[1], "q_l_0");
        assert_eq!(h[42], "tau_f_6");
    }

    #[test]
    fn trace_roundtrip_is_exact() {
        let trace = run_scenario(&ScenarioConfig::new(TransportKind::Wireless, 1_000_000, 8)).unwrap();
        let mut buf = Vec::new();
        write_states(&mut buf, &trace.ticks).unwrap();
        assert!(!buf.contains(&b'\r'));
        assert_eq!(read_states(buf.as_slice()).unwrap(), trace.ticks);
        let mut buf = Vec::new();
        write_packets(&mut buf, &trace.packets).unwrap();
        assert_eq!(read_packets(buf.as_slice()).unwrap(), trace.packets);
    }

    #[test]
    fn rejects_bad_header_and_values() {
        assert!(read_packets("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "direction,seq,sent_at_us,t_send_us,t_recv_us,deliver_at_us\nsideways,0,0,0,0,0\n";
        assert!(matches!(read_packets(bad.as_bytes()), Err(Error::TraceFormat { line: 2, .. })));
        let mut s = state_header().join(",");
        s.push('\n');
        s.push_str("0");
        s.push_str(&",1".repeat(41));
        s.push_str(",NaN\n");
        assert!(read_states(s.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn float_text_roundtrip(vals in prop::array::uniform7(-1e9f64..1e9)) {
            let v = JointVector::new(vals).unwrap();
            let tick = TickRecord { t: SimTime(3), q_leader: v, qdot_leader: v * 0.5, q_follower: -v, qdot_follower: v, tau_leader: v, tau_follower: v };
            let mut buf = Vec::new();
            write_states(&mut buf, &[tick]).unwrap();
            prop_assert_eq!(read_states(buf.as_slice()).unwrap(), vec![tick]);
        }
    }
}
