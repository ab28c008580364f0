use std::sync::{Arc, Mutex};

use synchron::*;

fn leds(n: usize) -> Board {
    Board::new(1_000_000, &vec![DriverKind::Led; n])
}

fn audited() -> Config {
    Config {
        audit: true,
        ..Config::default()
    }
}

fn led(p: &mut Proc, d: u32) -> Result<ChannelId> {
    let ch = p.channel()?;
    p.spawn_external(ch, DriverId(d))?;
    Ok(ch)
}

fn writes(r: &RunReport, d: u32) -> Vec<Time> {
    r.trace.driver_writes(DriverId(d)).map(|x| x.t).collect()
}

fn check(r: &RunReport) {
    assert!(r.violations.is_empty(), "{:?}", r.violations);
}

#[test]
fn periodic_sync_t_hits_exact_instants() {
    let mut rt = Runtime::new(audited(), &leds(2));
    rt.spawn(|p| {
        let ch = led(p, 1)?;
        let mut v = 1;
        loop {
            p.sync_t(p.units().sec(1), p.units().usec(1), &p.send(ch, v)?)?;
            v = 1 - v;
        }
    })
    .unwrap();
    let r = rt.run(Limit::until(3_500_000)).unwrap();
    check(&r);
    assert_eq!(writes(&r, 1), vec![1_000_000, 2_000_000, 3_000_000]);
    assert_eq!(r.trace.of_kind(TraceKind::DeadlineMiss).count(), 0);
}

#[test]
fn zero_baseline_is_plain_sync() {
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(|p| {
        let ch = led(p, 0)?;
        p.sync_t(0, 0, &p.send(ch, 1)?)?;
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    assert_eq!(writes(&r, 0), vec![0]);
    assert_eq!(r.trace.of_kind(TraceKind::TimedEnqueue).count(), 0);
}

#[test]
fn baseline_below_epsilon_skips_the_wait_queue() {
    for (epsilon, enqueued, at) in [(2, 0, 0), (0, 1, 1)] {
        let cfg = Config {
            epsilon,
            audit: true,
            ..Config::default()
        };
        let mut rt = Runtime::new(cfg, &leds(1));
        rt.spawn(|p| {
            let ch = led(p, 0)?;
            p.sync_t(1, 0, &p.send(ch, 1)?)?;
            Ok(())
        })
        .unwrap();
        let r = rt.run(Limit::none()).unwrap();
        check(&r);
        assert_eq!(r.trace.of_kind(TraceKind::TimedEnqueue).count(), enqueued);
        assert_eq!(writes(&r, 0), vec![at]);
    }
}

#[test]
fn negative_window_is_a_usage_error() {
    let seen = Arc::new(Mutex::new(None));
    let s = seen.clone();
    let mut rt = Runtime::new(Config::default(), &leds(1));
    rt.spawn(move |p| {
        let ch = led(p, 0)?;
        *s.lock().unwrap() = Some(p.sync_t_signed(-1, 0, &p.send(ch, 1)?).unwrap_err());
        Ok(())
    })
    .unwrap();
    rt.run(Limit::none()).unwrap();
    assert!(matches!(seen.lock().unwrap().take(), Some(Error::Usage(_))));
}

#[test]
fn second_alarm_is_armed_from_the_first() {
    let mut rt = Runtime::new(audited(), &leds(2));
    rt.spawn(|p| {
        let a = led(p, 0)?;
        let b = led(p, 1)?;
        p.spawn(move |p| p.sync_t(1100, 0, &p.send(b, 1)?).map(|_| ()))?;
        p.spawn(move |p| p.sync_t(1000, 0, &p.send(a, 1)?).map(|_| ()))?;
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    let alarms: Vec<_> = r
        .trace
        .of_kind(TraceKind::Alarm)
        .map(|x| (x.t, x.pid.unwrap().0))
        .collect();
    assert_eq!(alarms, vec![(1000, 2), (1100, 1)]);
    assert_eq!(writes(&r, 0), vec![1000]);
    assert_eq!(writes(&r, 1), vec![1100]);
}

#[test]
fn equal_wakeups_fire_in_arrival_order() {
    let mut rt = Runtime::new(audited(), &leds(3));
    rt.spawn(|p| {
        for d in 0..3 {
            let ch = led(p, d)?;
            p.spawn(move |p| p.sync_t(500, 0, &p.send(ch, 1)?).map(|_| ()))?;
        }
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    let order: Vec<_> = r
        .trace
        .driver_writes(DriverId(0))
        .chain(r.trace.driver_writes(DriverId(1)))
        .chain(r.trace.driver_writes(DriverId(2)))
        .map(|x| x.t)
        .collect();
    assert_eq!(order, vec![500, 500, 500]);
    let pids: Vec<_> = r
        .trace
        .of_kind(TraceKind::DriverWrite)
        .map(|x| x.pid.unwrap().0)
        .collect();
    assert_eq!(pids, vec![1, 2, 3]);
}

#[test]
fn tighter_deadline_preempts_busy_process() {
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(|p| {
        let ch = led(p, 0)?;
        // The timed process must enqueue before the busy one takes the CPU.
        p.spawn(move |p| p.sync_t(1000, 50, &p.send(ch, 1)?).map(|_| ()))?;
        p.spawn(move |p| p.busy(10_000))?;
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    assert!(r.edf_violations.is_empty(), "{:?}", r.edf_violations);
    let pre: Vec<_> = r.trace.of_kind(TraceKind::Preempt).collect();
    assert_eq!(pre.len(), 1);
    assert_eq!(
        (pre[0].t, pre[0].pid, pre[0].peer),
        (1000, Some(ProcessId(1)), Some(ProcessId(2)))
    );
    assert_eq!(writes(&r, 0), vec![1000]);
    // The busy process resumes and finishes its remaining work.
    assert_eq!(r.end_time, 10_000);
}

#[test]
fn equal_deadline_does_not_preempt_and_corrects_drift() {
    let local = Arc::new(Mutex::new(None));
    let l = local.clone();
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(move |p| {
        let ch = led(p, 0)?;
        p.spawn(move |p| p.sync_t(1000, 0, &p.send(ch, 1)?).map(|_| ()))?;
        p.spawn(move |p| {
            p.busy(5000)?;
            *l.lock().unwrap() = Some(p.local_time()?);
            Ok(())
        })?;
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    assert_eq!(r.trace.of_kind(TraceKind::Preempt).count(), 0);
    // The untimed process keeps the CPU; the timed one writes afterwards.
    assert_eq!(writes(&r, 0), vec![5000]);
    // The running process's local clock is pulled up to the alarm.
    assert_eq!(*local.lock().unwrap(), Some(1000));
}

#[test]
fn untimed_work_leaves_local_time_alone() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let s = seen.clone();
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(move |p| {
        let ch = led(p, 0)?;
        s.lock().unwrap().push(p.local_time()?);
        p.sync(&p.send(ch, 1)?)?;
        std::hint::black_box(synchron::harness::fib_tailrec(40));
        s.lock().unwrap().push(p.local_time()?);
        p.sync_t(700, 0, &p.send(ch, 0)?)?;
        s.lock().unwrap().push(p.local_time()?);
        Ok(())
    })
    .unwrap();
    rt.run(Limit::none()).unwrap();
    assert_eq!(*seen.lock().unwrap(), vec![0, 0, 700]);
}

#[test]
fn lagging_local_time_arms_alarm_in_the_past() {
    // After blocking until t=1000 the process's local clock still reads 100,
    // so its next wake-up (200) is already past and fires at once.
    let seen = Arc::new(Mutex::new(Vec::new()));
    let s = seen.clone();
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(move |p| {
        let out = led(p, 0)?;
        let ch = p.channel()?;
        p.spawn(move |p| {
            p.busy(1000)?;
            p.sync(&p.send(ch, 0)?).map(|_| ())
        })?;
        p.sync_t(100, 0, &p.recv(ch)?)?;
        s.lock().unwrap().push((p.now()?, p.local_time()?));
        p.sync_t(100, 0, &p.send(out, 1)?)?;
        s.lock().unwrap().push((p.now()?, p.local_time()?));
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    assert_eq!(*seen.lock().unwrap(), vec![(1000, 100), (1000, 200)]);
    assert_eq!(writes(&r, 0), vec![1000]);
}

#[test]
fn deadline_miss_is_recorded_not_signalled() {
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(|p| {
        let ch = p.channel()?;
        p.spawn(move |p| {
            p.busy(500)?;
            p.sync(&p.recv(ch)?).map(|_| ())
        })?;
        p.sync_t(100, 10, &p.send(ch, 1)?)?;
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    assert_eq!(r.outcome, Outcome::AllFinished);
    let miss: Vec<_> = r.trace.of_kind(TraceKind::DeadlineMiss).collect();
    assert_eq!(miss.len(), 1);
    assert_eq!((miss[0].t, miss[0].deadline_abs), (500, Some(110)));
}

#[test]
fn alarms_across_32_bit_boundaries() {
    const W: Time = 1 << 32;
    let targets = [W - 1, W, W + 1, 2 * W + 17];
    let mut rt = Runtime::new(audited(), &leds(4));
    rt.spawn(move |p| {
        for (d, t) in targets.iter().enumerate() {
            let ch = led(p, d as u32)?;
            let t = *t;
            p.spawn(move |p| p.sync_t(t, 0, &p.send(ch, 1)?).map(|_| ()))?;
        }
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    for (d, t) in targets.iter().enumerate() {
        assert_eq!(writes(&r, d as u32), vec![*t], "driver {d}");
    }
    let alarms: Vec<Time> = r.trace.of_kind(TraceKind::Alarm).map(|x| x.t).collect();
    assert_eq!(alarms, targets.to_vec());
}

#[test]
fn ready_process_with_earlier_deadline_is_an_edf_violation() {
    // A sender with a tight deadline hands the CPU to a receiver with a loose
    // one (the rendezvous rule). This is reported separately from invariant
    // violations.
    let mut rt = Runtime::new(audited(), &leds(1));
    rt.spawn(|p| {
        let ch = p.channel()?;
        let tick = p.channel()?;
        p.spawn(move |p| {
            p.sync_t(50, 1000, &p.recv(ch)?)?;
            p.busy(10)?;
            p.sync(&p.send(tick, 0)?).map(|_| ())
        })?;
        p.spawn(move |p| {
            p.sync_t(100, 5, &p.send(ch, 1)?)?;
            p.sync(&p.recv(tick)?).map(|_| ())
        })?;
        Ok(())
    })
    .unwrap();
    let r = rt.run(Limit::none()).unwrap();
    check(&r);
    assert!(!r.edf_violations.is_empty());
}
