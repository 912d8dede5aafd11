//! Reproduction checks for the published numbers. Prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use harvest_sim::controller::{static_power, SignalKind, SolutionConfig, Thresholds, APC_BASE_POWER, APC_E_ADC};
use harvest_sim::engine::{energy_audit, simulate, simulate_recorded, write_waveform_csv, Recording, SimReport};
use harvest_sim::powerchain::{RegulatorKind, RegulatorModel};
use harvest_sim::scenario::{self, bridge_apc, bridge_uvlo, Scenario, BUILTIN_NAMES};
use harvest_sim::sizing::{min_capacitance, recharge_time};
use harvest_sim::trace::ExcitationSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    ((x - target) / target).abs() <= rel
}

fn run(s: &Scenario) -> std::result::Result<SimReport, String> {
    simulate(s).map_err(|e| format!("{}: {e}", s.name))
}

fn builtin(name: &str) -> std::result::Result<SimReport, String> {
    run(&scenario::builtin(name).map_err(|e| e.to_string())?)
}

fn ideal() -> RegulatorModel {
    RegulatorModel {
        kind: RegulatorKind::Buck,
        eta: 1.0,
        p_quiescent: 0.0,
        v_out: 3.0,
    }
}

fn apc_static_power() -> Check {
    let th = Thresholds {
        v_pstart: 5.0,
        v_pgood: 4.8,
        v_psleep: 4.2,
        v_pclose: 3.6,
    };
    let rows = [(0.5, 27.65e-6), (4.0, 32.16e-6), (20.0, 52.80e-6)];
    let mut got = Vec::new();
    for (fs, want) in rows {
        let mut cfg = SolutionConfig::apc(th, fs);
        cfg.monitor_power = APC_BASE_POWER;
        cfg.e_adc = APC_E_ADC;
        let p = static_power(&cfg, &ideal());
        ensure((p - want).abs() <= 0.01e-6, format!("fs={fs}: {:.4} uW vs {:.2} uW", p * 1e6, want * 1e6))?;
        got.push(p);
    }
    // The three published rows must lie on one line in fs.
    let slope = (rows[2].1 - rows[0].1) / (rows[2].0 - rows[0].0);
    let mid = rows[0].1 + slope * (rows[1].0 - rows[0].0);
    ensure((mid - rows[1].1).abs() <= 0.01e-6, format!("published rows not affine in fs: {:.4} uW", mid * 1e6))?;
    Ok(format!(
        "{:.3} / {:.3} / {:.3} uW, implied e_adc {:.4} uJ",
        got[0] * 1e6,
        got[1] * 1e6,
        got[2] * 1e6,
        slope * 1e6
    ))
}

fn cam_cold_start() -> Check {
    let s = scenario::cam();
    let r = run(&s)?;
    let t = r.cold_start_time.ok_or("no PStart")?;
    let p = match s.trace {
        Some(ExcitationSpec::Constant { p }) => p,
        _ => return Err("cam trace is not constant".into()),
    };
    let th = s.solution.thresholds.v_pstart;
    let analytic = s.capacitor.capacitance * th * th / (2.0 * p);
    ensure(within(t, analytic, 0.02), format!("{t:.3} s vs analytic {analytic:.3} s"))?;
    ensure(within(t, 42.0, 0.10), format!("{t:.3} s vs published 42 s"))?;
    Ok(format!("{t:.3} s (analytic {analytic:.3} s, published 42 s)"))
}

fn beacon_episode() -> Check {
    let r = builtin("beacon")?;
    let t = r.cold_start_time.ok_or("no PStart")?;
    ensure(within(t, 0.320, 0.05), format!("cold start {t:.4} s"))?;
    let close = r.signal_times(SignalKind::PClose).into_iter().find(|&c| c > t);
    let awake = close.unwrap_or(scenario::beacon().duration) - t;
    ensure(awake >= 0.120, format!("task operation lasted {awake:.4} s"))?;
    ensure(r.outages == 0, format!("{} outages", r.outages))?;
    ensure(r.iterations_completed == 1, format!("{} beacons", r.iterations_completed))?;
    ensure(
        (r.task_energy - 18.88e-6).abs() <= 0.01e-6,
        format!("task energy {:.4} uJ", r.task_energy * 1e6),
    )?;
    Ok(format!(
        "cold start {:.1} ms, awake {:.1} ms, 1 beacon, {:.3} uJ, 0 outages",
        t * 1e3,
        awake * 1e3,
        r.task_energy * 1e6
    ))
}

fn lora_duty_cycle() -> Check {
    let r = builtin("lora")?;
    let t = r.cold_start_time.ok_or("no PStart")?;
    ensure(within(t, 450.0, 0.05), format!("cold start {t:.2} s"))?;
    let wakes = r.signal_times(SignalKind::PGood);
    ensure(wakes.len() >= 5, format!("only {} wake-ups", wakes.len()))?;
    let periods: Vec<f64> = wakes.windows(2).map(|w| w[1] - w[0]).collect();
    for p in &periods {
        ensure(within(*p, 200.0, 0.05), format!("cycle period {p:.2} s"))?;
    }
    for it in &r.iterations {
        ensure(within(it.energy, 23.86e-3, 0.01), format!("cycle energy {:.4} mJ", it.energy * 1e3))?;
    }
    ensure(r.iterations.len() >= 4, format!("{} cycles", r.iterations.len()))?;
    ensure(r.outages == 0, format!("{} outages", r.outages))?;
    Ok(format!(
        "cold start {t:.1} s, periods {:?} s, {} cycles of {:.3} mJ, 0 outages",
        periods.iter().map(|p| (p * 10.0).round() / 10.0).collect::<Vec<_>>(),
        r.iterations.len(),
        r.iterations[0].energy * 1e3
    ))
}

fn polling_regimes() -> Check {
    let good = run(&bridge_apc(4.0))?;
    ensure(good.outages == 0, format!("4 Hz: {} outages", good.outages))?;
    ensure(good.iterations_completed > 0, "4 Hz: no beacons".into())?;
    let fast = run(&bridge_apc(20.0))?;
    let c = fast.outages_by_cause;
    ensure(c.startup_failure + c.missed_checkpoint >= 1, format!("20 Hz: {c:?}"))?;
    let slow = run(&bridge_apc(0.5))?;
    ensure(slow.outages_by_cause.missed_checkpoint >= 1, format!("0.5 Hz: {:?}", slow.outages_by_cause))?;
    Ok(format!(
        "4 Hz: 0 outages; 20 Hz: {} startup_failure + {} missed_checkpoint; 0.5 Hz: {} missed_checkpoint",
        c.startup_failure, c.missed_checkpoint, slow.outages_by_cause.missed_checkpoint
    ))
}

fn uvlo_tradeoff() -> Check {
    let small = run(&bridge_uvlo(10e-6))?;
    ensure(
        small.outages_by_cause.startup_failure >= 1,
        format!("10 uF: {:?}", small.outages_by_cause),
    )?;
    let large = run(&bridge_uvlo(100e-6))?;
    ensure(large.outages == 0, format!("100 uF: {} outages", large.outages))?;
    let (a, b) = match (small.cold_start_time, large.cold_start_time) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("missing PStart".into()),
    };
    ensure(b > a, format!("100 uF starts at {b:.3} s, 10 uF at {a:.3} s"))?;
    Ok(format!(
        "10 uF: {} startup_failure, first PStart {a:.3} s; 100 uF: 0 outages, cold start {b:.3} s",
        small.outages_by_cause.startup_failure
    ))
}

fn segmented_image() -> Check {
    let s = scenario::builtin("cam-wind").map_err(|e| e.to_string())?;
    let r = run(&s)?;
    let image_bytes = s.build_workload().map_err(|e| e.to_string())?.image_bytes.ok_or("no image size")?;
    ensure(image_bytes == 19_602, format!("image is {image_bytes} B"))?;
    // The image that rode through a shutdown.
    let closes = r.signal_times(SignalKind::PClose);
    let spans = |index: u64| {
        r.iterations
            .iter()
            .find(|i| i.index == index)
            .map(|it| (it, closes.iter().filter(|&&t| t > it.start && t < it.end).count()))
    };
    let (img, it, shutdowns) = r
        .images
        .iter()
        .find_map(|img| match spans(img.index) {
            Some((it, n)) if n >= 1 => Some((img, it, n)),
            _ => None,
        })
        .ok_or("no image crossed a shutdown")?;
    ensure(img.segments >= 3, format!("image {} arrived in {} segments", img.index, img.segments))?;
    ensure(
        img.complete && img.verified && img.bytes_received == image_bytes && img.duplicate_packets == 0 && img.gaps == 0,
        format!("image {}: {img:?}", img.index),
    )?;
    let splits = img.segments - 1;
    ensure(
        it.checkpoints == splits && it.restores == splits,
        format!("{} segments but {} checkpoints / {} restores", img.segments, it.checkpoints, it.restores),
    )?;
    ensure(within(it.energy, 27e-3, 0.02), format!("image energy {:.3} mJ", it.energy * 1e3))?;
    for other in &r.images {
        ensure(other.verified && other.duplicate_packets == 0, format!("image {} corrupt", other.index))?;
    }
    Ok(format!(
        "image {} in {} segments (shutdowns {}, resumes after self-reboot {}), {} B exact, {:.3} mJ, NV {:.3} mJ reported separately",
        img.index,
        img.segments,
        shutdowns,
        img.segments as u64 - 1 - shutdowns as u64,
        img.bytes_received,
        it.energy * 1e3,
        r.nv_energy * 1e3
    ))
}

fn render(s: &Scenario) -> std::result::Result<(Vec<u8>, String, f64), String> {
    let start = Instant::now();
    let (rows, report) = simulate_recorded(s, Recording::every(100)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut csv = Vec::new();
    write_waveform_csv(&rows, &mut csv).map_err(|e| e.to_string())?;
    energy_audit(&report).map_err(|e| format!("{}: {e}", s.name))?;
    ensure(
        report.audit.residual.abs() < 1e-3 * report.audit.harvested,
        format!("{}: residual {:e} J", s.name, report.audit.residual),
    )?;
    Ok((csv, report.to_json(), secs))
}

fn conservation_and_determinism() -> Check {
    let mut slowest = (String::new(), 0.0);
    for name in BUILTIN_NAMES {
        let s = scenario::builtin(name).map_err(|e| e.to_string())?;
        let (csv_a, json_a, secs) = render(&s)?;
        let (csv_b, json_b, _) = render(&s)?;
        ensure(csv_a == csv_b, format!("{name}: waveform differs between runs"))?;
        ensure(json_a == json_b, format!("{name}: report differs between runs"))?;
        ensure(secs < 5.0, format!("{name}: took {secs:.2} s"))?;
        if secs > slowest.1 {
            slowest = (name.to_string(), secs);
        }
    }
    Ok(format!(
        "{} builtins audited and byte-identical twice; slowest {} at {:.2} s",
        BUILTIN_NAMES.len(),
        slowest.0,
        slowest.1
    ))
}

fn sizing_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let v_close: f64 = rng.gen_range(0.0..5.0);
        let v_start = v_close + rng.gen_range(0.05..10.0);
        let eta: f64 = rng.gen_range(0.05..=1.0);
        let e_task: f64 = rng.gen_range(1e-7..1e-1);
        let e_static: f64 = rng.gen_range(0.0..1e-2);
        let c = min_capacitance(e_task, e_static, eta, v_start, v_close).map_err(|e| e.to_string())?;
        let budget = 0.5 * eta * c * (v_start * v_start - v_close * v_close);
        worst = worst.max((budget / (e_task + e_static) - 1.0).abs());
    }
    let mut worst_t = 0.0_f64;
    for i in 0..20 {
        let c = rng.gen_range(1e-6..5e-3);
        let v_lo = rng.gen_range(0.0..3.0);
        let v_hi = v_lo + rng.gen_range(0.5..3.0);
        let p = rng.gen_range(50e-6..5e-3);
        let analytic = recharge_time(c, v_lo, v_hi, p).map_err(|e| e.to_string())?;
        let mut s = scenario::beacon();
        s.name = format!("recharge-{i}");
        s.capacitor.capacitance = c;
        s.capacitor.initial_voltage = v_lo;
        s.trace = Some(ExcitationSpec::Constant { p });
        s.solution = SolutionConfig::uvlo(v_hi, v_lo.max(0.1) * 0.5);
        s.dt = analytic / 20_000.0;
        s.duration = analytic * 1.2;
        let r = run(&s)?;
        let t = r.cold_start_time.ok_or_else(|| format!("{}: never started", s.name))?;
        worst_t = worst_t.max(((t - analytic) / analytic).abs());
    }
    ensure(worst <= 1e-12, format!("inverse identity off by {worst:e}"))?;
    ensure(worst_t < 5e-3, format!("recharge time off by {:.3} %", worst_t * 100.0))?;
    Ok(format!(
        "1000 inverses within {worst:.1e}, 20 recharge runs within {:.4} %",
        worst_t * 100.0
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("APC static power", apc_static_power),
        ("cam cold start", cam_cold_start),
        ("beacon episode", beacon_episode),
        ("LoRa duty cycle", lora_duty_cycle),
        ("polling regimes", polling_regimes),
        ("UVLO capacitor trade-off", uvlo_tradeoff),
        ("exactly-once image streaming", segmented_image),
        ("conservation and determinism", conservation_and_determinism),
        ("capacitor sizing algebra", sizing_algebra),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
