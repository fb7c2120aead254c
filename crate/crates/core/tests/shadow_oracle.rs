//! Randomized traces on a small device checked against the shadow-map oracle.

use proptest::prelude::*;
use zonesim_core::config::BindingPolicyKind;

#[allow(dead_code)]
mod common;
use common::oracle::run_case;
use common::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1024, ..ProptestConfig::default() })]

    #[test]
    fn reads_match_the_shadow_map(k in knobs(), ops in prop::collection::vec(op(), 1..160)) {
        run_case(&k, &ops)?;
    }
}

/// Fixed long trace that exercises GC in both destinations.
#[test]
fn long_trace_runs_gc_in_both_destinations() {
    for to_regular in [false, true] {
        let k = Knobs {
            with_block_ns: true,
            buffers: 2,
            buffer_units: 12,
            policy: BindingPolicyKind::Modulo,
            all_in_slc: false,
            to_regular,
            preemptible: true,
            gc: (1, 2),
            hybrid: true,
            bitmap: false,
            pin: true,
            cache_entries: 64,
            blocks_per_zone: None,
        };
        let mut ops = Vec::new();
        for i in 0..400u32 {
            ops.push(Op::BlockWrite { lba: (i * 13 % 28) as u8, units: 4, synced: i % 3 == 0 });
            ops.push(Op::Write { zone: (i % 3) as u8, units: 5, synced: i % 2 == 0 });
            ops.push(Op::Read { pick: (i * 31) as u16, units: 3 });
            if i % 50 == 49 {
                ops.push(Op::Reset { zone: (i / 50 % 3) as u8 });
            }
        }
        let (checked, dev) = run_case(&k, &ops).unwrap();
        assert!(checked > 1000);
        for ns in 0..2 {
            assert!(dev.counters(ns).unwrap().gc_runs > 0, "namespace {ns} never collected");
        }
        let t = dev.totals(1).unwrap();
        if to_regular {
            assert!(t.fold_bytes > 0);
        } else {
            assert!(t.gc_bytes > 0);
        }
    }
}

