//! Property tests over the ingest, timeline and metric invariants.

use std::collections::BTreeMap;
use std::io::{BufReader, Read};

use ehrseq::eval::{auroc, calibration_curve, ScoredSet};
use ehrseq::fhir::{parse_line, parse_sharded, AttrKind, AttrValue, Attribute, FhirResource, ResourceReader, ResourceType};
use ehrseq::models::ensemble_predict;
use ehrseq::timeline::{
    build_timelines, fit_quantizer, slice_at, ArchiveReader, ArchiveWriter, NumericQuantizer, TokenizerConfig, Vocabulary,
};
use proptest::prelude::*;

fn resource_type() -> impl Strategy<Value = ResourceType> {
    prop::sample::select(ResourceType::ALL.to_vec())
}

fn attribute() -> impl Strategy<Value = Attribute> {
    let name = "[a-z][a-z_]{0,8}";
    prop_oneof![
        (name, -1e6f64..1e6).prop_map(|(n, x)| Attribute::numeric(n, x)),
        (name, "[A-Za-z0-9 .-]{0,12}").prop_map(|(n, v)| Attribute::categorical(n, v)),
        (name, "[a-z ]{0,40}").prop_map(|(n, v)| Attribute::text(n, v)),
    ]
}

fn resource() -> impl Strategy<Value = FhirResource> {
    (resource_type(), "[a-z0-9]{1,8}", "p[0-9]{1,3}", 0i64..4_000_000_000_000, any::<bool>(), prop::collection::vec(attribute(), 1..5))
        .prop_map(|(rt, id, pid, t, untimed, attributes)| FhirResource {
            resource_type: rt,
            resource_id: id,
            patient_id: pid,
            event_time: if untimed && rt == ResourceType::Patient { None } else { Some(t) },
            attributes,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn wire_round_trip(r in resource()) {
        prop_assert_eq!(parse_line(&r.to_line()).unwrap(), r);
    }

    #[test]
    fn sharded_ingest_ignores_order_and_shard_count(
        rs in prop::collection::vec(resource(), 1..40),
        seed in any::<u64>(),
        shards in 1usize..8,
    ) {
        let lines: Vec<String> = rs.iter().map(FhirResource::to_line).collect();
        let mut shuffled = lines.clone();
        // Deterministic Fisher-Yates from the proptest seed.
        let mut s = seed | 1;
        for i in (1..shuffled.len()).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            shuffled.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let (a, ra) = parse_sharded(&lines.join("\n"), 1);
        let (b, rb) = parse_sharded(&shuffled.join("\n"), shards);
        prop_assert_eq!(a, b);
        prop_assert_eq!(ra, rb);
    }

    #[test]
    fn slices_grow_with_time(rs in prop::collection::vec(resource(), 1..30), t1 in 0i64..4_000_000_000_000, dt in 0i64..1_000_000_000_000) {
        let q = NumericQuantizer::default();
        let v = Vocabulary::from_tokens(vec!["<unk>".into(), "<pad>".into()], 1);
        for tl in build_timelines(&rs, &v, &q, &TokenizerConfig::default()) {
            let early = slice_at(&tl.occurrences, t1);
            let late = slice_at(&tl.occurrences, t1 + dt);
            prop_assert!(early.len() <= late.len());
            prop_assert_eq!(early, &late[..early.len()]);
            prop_assert!(early.iter().all(|o| o.time <= t1));
            prop_assert!(tl.occurrences.windows(2).all(|w| w[0].time <= w[1].time));
        }
    }

    #[test]
    fn quantizer_is_monotone(values in prop::collection::vec(-1e3f64..1e3, 20..200), x in -2e3f64..2e3, y in -2e3f64..2e3) {
        let q = fit_quantizer(&BTreeMap::from([("k".to_string(), values)]));
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let (a, b) = (q.bucket("k", lo).unwrap(), q.bucket("k", hi).unwrap());
        prop_assert!(a <= b);
        prop_assert!((1..=10).contains(&a) && (1..=10).contains(&b));
    }

    #[test]
    fn auroc_rank_invariance_and_complement(pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..60)) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let base = auroc(&ScoredSet::from_pairs(scores.clone(), labels.clone()).unwrap()).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (s / 3.0).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&ScoredSet::from_pairs(warped, labels.clone()).unwrap()).unwrap(), base);
        let flipped: Vec<bool> = labels.iter().map(|y| !y).collect();
        let comp = auroc(&ScoredSet::from_pairs(scores, flipped).unwrap()).unwrap();
        prop_assert!((base + comp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_stays_within_members(members in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..6)) {
        let mean = ensemble_predict(&members).unwrap();
        for (k, m) in mean.iter().enumerate() {
            let lo = members.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*m >= lo - 1e-15 && *m <= hi + 1e-15);
        }
    }

    #[test]
    fn calibration_counts_cover_every_case(pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 2..200), bins in 1usize..20) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let s = ScoredSet::from_pairs(pairs.iter().map(|p| p.0).collect(), labels).unwrap();
        let curve = calibration_curve(&s, bins);
        prop_assert_eq!(curve.iter().map(|b| b.count).sum::<usize>(), pairs.len());
        prop_assert!(curve.iter().all(|b| (0.0..=1.0).contains(&b.mean_pred) && (0.0..=1.0).contains(&b.empirical_rate)));
    }

    #[test]
    fn archive_round_trip(rs in prop::collection::vec(resource(), 1..30)) {
        let q = NumericQuantizer::default();
        let v = Vocabulary::from_tokens(vec!["<unk>".into(), "<pad>".into()], 1);
        let tls = build_timelines(&rs, &v, &q, &TokenizerConfig::default());
        let mut w = ArchiveWriter::new(Vec::new()).unwrap();
        for t in &tls {
            w.write(t).unwrap();
        }
        let bytes = w.finish().unwrap();
        prop_assert_eq!(ArchiveReader::new(&bytes[..]).unwrap().read_all().unwrap(), tls);
    }
}

/// Produces `n` resource lines lazily, so the test itself holds no copy.
struct LineSource {
    n: usize,
    i: usize,
    pending: Vec<u8>,
    pos: usize,
}

impl Read for LineSource {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.pos == self.pending.len() {
            if self.i == self.n {
                return Ok(0);
            }
            let r = FhirResource {
                resource_type: ResourceType::Observation,
                resource_id: format!("o{}", self.i),
                patient_id: format!("p{}", self.i % 997),
                event_time: Some(1_400_000_000_000 + self.i as i64 * 60_000),
                attributes: vec![Attribute::numeric("heart_rate", 60.0 + (self.i % 50) as f64)],
            };
            self.pending = (r.to_line() + "\n").into_bytes();
            self.pos = 0;
            self.i += 1;
        }
        let k = buf.len().min(self.pending.len() - self.pos);
        buf[..k].copy_from_slice(&self.pending[self.pos..self.pos + k]);
        self.pos += k;
        Ok(k)
    }
}

#[test]
fn streaming_reader_memory_is_bounded_by_longest_line() {
    let mut reader = ResourceReader::new(BufReader::with_capacity(4096, LineSource { n: 200_000, i: 0, pending: Vec::new(), pos: 0 }));
    let mut accepted = 0u64;
    let mut max_cap = 0;
    while let Some(rec) = reader.next_record().unwrap() {
        assert!(rec.is_ok());
        accepted += 1;
        max_cap = max_cap.max(reader.buffer_capacity());
    }
    assert_eq!(accepted, 200_000);
    assert_eq!(reader.report().resources_accepted, 200_000);
    assert!(max_cap < 1024, "line buffer grew to {max_cap} bytes");
}

#[test]
fn numeric_attribute_as_text_is_coerced_or_rejected() {
    let ok = r#"{"resourceType":"Observation","id":"o1","patient":"p1","time":"2016-01-01T00:00:00Z","attributes":[{"name":"k","value":"4.5","kind":"numeric"}]}"#;
    let r = parse_line(ok).unwrap();
    assert_eq!(r.attributes[0].value, AttrValue::Number(4.5));
    assert_eq!(r.attributes[0].kind, AttrKind::Numeric);
    let bad = ok.replace("4.5", "high");
    assert!(parse_line(&bad).is_err());
}

#[test]
fn schema_examples_parse() {
    let schema: serde_json::Value = serde_json::from_str(include_str!("../schema/resource.schema.json")).unwrap();
    let examples = schema["examples"].as_array().unwrap();
    assert!(!examples.is_empty());
    for ex in examples {
        let r = parse_line(&ex.to_string()).unwrap_or_else(|e| panic!("{ex}: {e:?}"));
        assert_eq!(parse_line(&r.to_line()).unwrap(), r);
    }
}
