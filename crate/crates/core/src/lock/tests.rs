use std::sync::Arc;

use super::*;
use crate::bench::{run, BenchConfig, BenchKind};
use crate::error::Error;
use crate::rma::{OpStats, RmaContext, Window};
use crate::topology::{CounterMap, LockParams, TopologySpec};
use crate::verify::EventKind;

fn config(procs: usize, fanout: &[usize], reader: i64) -> Arc<LockConfig> {
    let topo = TopologySpec::new(procs, fanout).unwrap();
    let params = LockParams::new(vec![4; topo.levels()], reader).unwrap();
    let counters = CounterMap::new(procs, procs).unwrap();
    Arc::new(LockConfig::new(topo, counters, params).unwrap())
}

fn context(cfg: &LockConfig, rank: usize) -> RmaContext {
    let window = Window::new(cfg.procs(), cfg.layout.words(), None).unwrap();
    RmaContext::new(Arc::new(window), rank).unwrap()
}

fn counter(ctx: &RmaContext, cfg: &LockConfig) -> (i64, i64) {
    let w = ctx.window();
    (w.peek(1, cfg.layout.arrive()).unwrap(), w.peek(1, cfg.layout.depart()).unwrap())
}

fn set_counter(ctx: &RmaContext, cfg: &LockConfig, arrive: i64, depart: i64) {
    ctx.window().poke(1, cfg.layout.arrive(), arrive).unwrap();
    ctx.window().poke(1, cfg.layout.depart(), depart).unwrap();
}

#[test]
fn reset_clears_mode_and_departures() {
    let cfg = config(1, &[], 8);
    let mut ctx = context(&cfg, 1);
    for ((a, d), want) in [
        ((SENTINEL + 5, 5), (0, 0)),
        ((SENTINEL + 5, 3), (2, 0)),
        ((7, 7), (0, 0)),
        ((4, 0), (4, 0)),
    ] {
        set_counter(&ctx, &cfg, a, d);
        reset_counter(&cfg, &mut ctx, 1).unwrap();
        assert_eq!(counter(&ctx, &cfg), want, "from ({a}, {d})");
    }
}

#[test]
fn write_mode_adds_sentinel() {
    let cfg = config(1, &[], 8);
    let mut ctx = context(&cfg, 1);
    set_counter(&ctx, &cfg, 5, 2);
    set_counters_to_write(&cfg, &mut ctx).unwrap();
    assert_eq!(counter(&ctx, &cfg), (SENTINEL + 5, 2));
}

#[test]
fn reader_at_batch_limit_reclaims_departures() {
    let cfg = config(1, &[], 8);
    let mut ctx = context(&cfg, 1);
    set_counter(&ctx, &cfg, 8, 8);
    let mut h = LockKind::Rmarw.handle(&cfg, 1).unwrap();
    h.acquire_read(&mut ctx).unwrap();
    assert_eq!(counter(&ctx, &cfg), (1, 0));
    h.release_read(&mut ctx).unwrap();
    assert_eq!(counter(&ctx, &cfg), (1, 1));
}

#[test]
fn writer_after_readers_zeroes_counter() {
    let cfg = config(1, &[], 8);
    let mut ctx = context(&cfg, 1);
    let mut h = LockKind::Rmarw.handle(&cfg, 1).unwrap();
    for _ in 0..3 {
        h.acquire_read(&mut ctx).unwrap();
        h.release_read(&mut ctx).unwrap();
    }
    assert_eq!(counter(&ctx, &cfg), (3, 3));
    h.acquire_write(&mut ctx).unwrap();
    assert_eq!(counter(&ctx, &cfg), (SENTINEL + 3, 3));
    h.release_write(&mut ctx).unwrap();
    assert_eq!(counter(&ctx, &cfg), (0, 0));
}

#[test]
fn misuse_is_a_protocol_error() {
    let cfg = config(2, &[], 8);
    for kind in LockKind::ALL {
        let mut ctx = context(&cfg, 1);
        let mut h = kind.handle(&cfg, 1).unwrap();
        assert!(matches!(h.release_write(&mut ctx), Err(Error::Protocol(_))), "{kind:?}");
        h.acquire_write(&mut ctx).unwrap();
        assert!(matches!(h.acquire_write(&mut ctx), Err(Error::Protocol(_))), "{kind:?}");
        if kind.is_reader_writer() {
            assert!(matches!(h.release_read(&mut ctx), Err(Error::Protocol(_))));
        }
        h.release_write(&mut ctx).unwrap();
    }
}

fn uncontended(kind: LockKind, read: bool) -> OpStats {
    let cfg = config(1, &[], 8);
    let mut ctx = context(&cfg, 1);
    let mut h = kind.handle(&cfg, 1).unwrap();
    if read {
        h.acquire_read(&mut ctx).unwrap();
        h.release_read(&mut ctx).unwrap();
    } else {
        h.acquire_write(&mut ctx).unwrap();
        h.release_write(&mut ctx).unwrap();
    }
    ctx.stats()
}

#[test]
fn uncontended_call_counts() {
    let queue = OpStats { fao: 1, get: 1, cas: 1, flush: 3, ..OpStats::default() };
    assert_eq!(uncontended(LockKind::Dmcs, false), queue);
    assert_eq!(uncontended(LockKind::Rmamcs, false), queue);
    let spin = uncontended(LockKind::Spin, false);
    assert_eq!((spin.cas, spin.put, spin.calls()), (1, 1, 2));
    let reader = uncontended(LockKind::Rmarw, true);
    assert_eq!((reader.fao, reader.accumulate, reader.calls()), (1, 1, 2));
}

#[test]
fn dmcs_serves_in_queue_order() {
    let topo = TopologySpec::new(8, &[2]).unwrap();
    let mut cfg = BenchConfig::new(BenchKind::Wcsb, LockKind::Dmcs, topo);
    cfg.iterations = 20;
    cfg.writer_fraction = 1.0;
    cfg.audit = true;
    cfg.latency.jitter = 50;
    let result = run(&cfg).unwrap();
    let events = result.log.as_ref().unwrap().snapshot();
    let order = |kind| events.iter().filter(|e| e.kind == kind).map(|e| e.rank).collect::<Vec<_>>();
    assert_eq!(order(EventKind::QueueEnter), order(EventKind::WriteEnter));
}
