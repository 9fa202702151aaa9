use std::net::Ipv4Addr;

use eids::flowcap::{
    build_frame, identify_flows, parse_pcap_bytes, prepare_packets, preprocess_packet, write_pcap,
    Dataset, FlowVariant, PacketFilter, TsResolution, IPPROTO_TCP, IPPROTO_UDP,
};
use eids::{FlowKey, Packet, PrepConfig};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Spec {
    src: u8,
    dst: u8,
    tcp: bool,
    sport: u16,
    dport: u16,
    payload: Vec<u8>,
    gap_ns: u64,
}

fn spec() -> impl Strategy<Value = Spec> {
    (
        1u8..6,
        1u8..6,
        any::<bool>(),
        any::<u16>(),
        prop::sample::select(vec![80u16, 53, 443, 8080]),
        prop::collection::vec(any::<u8>(), 0..64),
        0u64..5_000_000,
    )
        .prop_map(|(src, dst, tcp, sport, dport, payload, gap_ns)| Spec {
            src,
            dst,
            tcp,
            sport,
            dport,
            payload,
            gap_ns,
        })
}

fn packets(specs: &[Spec]) -> Vec<Packet> {
    let mut ts = 1_000_000_000u64;
    specs
        .iter()
        .map(|s| {
            ts += s.gap_ns;
            let proto = if s.tcp { IPPROTO_TCP } else { IPPROTO_UDP };
            let bytes = build_frame(
                Ipv4Addr::new(10, 0, 0, s.src),
                Ipv4Addr::new(10, 0, 0, s.dst),
                proto,
                (s.sport, s.dport),
                1,
                &s.payload,
            );
            Packet {
                ts_ns: ts,
                orig_len: bytes.len() as u32,
                bytes,
            }
        })
        .collect()
}

fn reversed(s: &Spec) -> Spec {
    Spec {
        src: s.dst,
        dst: s.src,
        sport: s.dport,
        dport: s.sport,
        ..s.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Without truncation every packet lands in exactly one flow, in order.
    #[test]
    fn flows_partition_the_capture(specs in prop::collection::vec(spec(), 0..60), five in any::<bool>()) {
        let pkts = packets(&specs);
        let variant = if five { FlowVariant::FiveTuple } else { FlowVariant::ThreeTuple };
        let cfg = PrepConfig { max_len: 1000, flow_variant: variant, ..PrepConfig::default() };
        let part = identify_flows(&pkts, &cfg);
        let total: usize = part.flows.values().map(Vec::len).sum();
        prop_assert_eq!(total, pkts.len());
        prop_assert_eq!(part.skipped.total(), 0);
        for flow in part.flows.values() {
            prop_assert!(flow.windows(2).all(|w| w[0].ts_ns <= w[1].ts_ns));
        }
    }

    /// Truncation keeps exactly min(len, N) packets per flow.
    #[test]
    fn truncation_counts(specs in prop::collection::vec(spec(), 0..80), n in 1usize..10) {
        let pkts = packets(&specs);
        let cfg = PrepConfig { max_len: n, ..PrepConfig::default() };
        let full = identify_flows(&pkts, &PrepConfig { max_len: usize::MAX, ..cfg.clone() });
        let cut = identify_flows(&pkts, &cfg);
        let mut dropped = 0;
        for (k, f) in &full.flows {
            prop_assert_eq!(cut.flows[k].len(), f.len().min(n));
            prop_assert_eq!(&cut.flows[k][..], &f[..f.len().min(n)]);
            dropped += f.len().saturating_sub(n);
        }
        prop_assert_eq!(cut.skipped.over_length, dropped);
    }

    /// A packet and its reply share a key in both variants.
    #[test]
    fn keys_ignore_direction(s in spec(), five in any::<bool>()) {
        let variant = if five { FlowVariant::FiveTuple } else { FlowVariant::ThreeTuple };
        let cfg = PrepConfig { flow_variant: variant, ..PrepConfig::default() };
        let pkts = packets(&[s.clone(), reversed(&s)]);
        prop_assert_eq!(identify_flows(&pkts, &cfg).flows.len(), 1);
    }

    #[test]
    fn key_text_round_trips(s in spec(), five in any::<bool>()) {
        let variant = if five { FlowVariant::FiveTuple } else { FlowVariant::ThreeTuple };
        let cfg = PrepConfig { flow_variant: variant, ..PrepConfig::default() };
        let part = identify_flows(&packets(&[s]), &cfg);
        let key = *part.flows.keys().next().unwrap();
        prop_assert_eq!(key.to_string().parse::<FlowKey>().unwrap(), key);
    }

    /// Preprocessing always yields `d` values in [0, 1], whatever the frame size.
    #[test]
    fn preprocessed_length_is_d(s in spec(), d in 1usize..600) {
        let p = &packets(&[s])[0];
        let row = preprocess_packet(p, d).unwrap();
        prop_assert_eq!(row.len(), d);
        prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        // Re-preprocessing at the same d is stable.
        prop_assert_eq!(preprocess_packet(p, d).unwrap(), row);
    }

    #[test]
    fn pcap_round_trip(specs in prop::collection::vec(spec(), 0..40), nanos in any::<bool>()) {
        let mut pkts = packets(&specs);
        let res = if nanos { TsResolution::Nanos } else { TsResolution::Micros };
        if !nanos {
            pkts.iter_mut().for_each(|p| p.ts_ns -= p.ts_ns % 1000);
        }
        let mut buf = Vec::new();
        write_pcap(&mut buf, &pkts, res).unwrap();
        let cap = parse_pcap_bytes(&buf).unwrap();
        prop_assert_eq!(cap.resolution, res);
        prop_assert_eq!(cap.packets, pkts);
    }

    /// Prepared records satisfy the record invariants and survive a dataset
    /// file round trip bit for bit.
    #[test]
    fn prepared_records_round_trip(specs in prop::collection::vec(spec(), 1..60)) {
        let cfg = PrepConfig { filter: PacketFilter::All, ..PrepConfig::default() };
        let prep = prepare_packets(&packets(&specs), &cfg).unwrap();
        for r in &prep.records {
            prop_assert!(r.check_invariants(cfg.max_len).is_ok());
        }
        let ds = Dataset { classes: vec!["a".into()], prep: cfg, records: prep.records, skipped: prep.skipped };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        ds.save(&path).unwrap();
        prop_assert_eq!(Dataset::load(&path).unwrap(), ds);
    }
}
