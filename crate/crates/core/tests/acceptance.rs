//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use autoclima_core::acquisition::{AcquisitionConfig, EnvSample, OfferDecision, SampleBuffer};
use autoclima_core::estimator::{AutomationState, ModelSlot};
use autoclima_core::nnet::{Activation, Example, Gradients, Layer, Network, OutputMask};
use autoclima_core::normalize::NormalizationStats;
use autoclima_core::profile::{
    eval_scenario, generate_library, library_path, load_profile, save_profile, write_atomic, Profile, ProfileError,
    Provenance, UserType,
};
use autoclima_core::schema::{AutomationMode, EnvSchema, SetpointSchema};
use autoclima_core::sim::run::{run_scenario, LoopOptions, RoundRecord, RunMode, RunOutput};
use autoclima_core::sim::thermal::{thermal_step, ActuatorState, CabinState, ThermalParams};
use autoclima_core::sim::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- network

fn random_net(rng: &mut ChaCha8Rng, act: Activation) -> Network {
    let hidden = rng.random_range(0..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..hidden {
        sizes.push(rng.random_range(1..=16));
    }
    sizes.push(rng.random_range(1..=4));
    let mut net = Network::new(&sizes, act, rng.random()).unwrap();
    // non-zero biases so that the bias gradients are exercised too
    for l in net.layers_mut() {
        for b in l.biases_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

fn random_batch(rng: &mut ChaCha8Rng, net: &Network) -> Vec<Example> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| Example {
            input: (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            target: (0..net.output_dim()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            mask: (0..net.output_dim()).map(|_| rng.random_bool(0.8)).collect(),
        })
        .collect()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> OutputMask {
    let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    if !flags.iter().any(|&f| f) {
        flags[rng.random_range(0..n)] = true;
    }
    OutputMask::new(flags)
}

/// Pre-activations of every hidden unit, recomputed independently.
fn hidden_preactivations(net: &Network, input: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut a = input.to_vec();
    let layers = net.layers();
    for (k, l) in layers.iter().enumerate() {
        let z: Vec<f64> = (0..l.outputs())
            .map(|r| l.biases()[r] + (0..l.inputs()).map(|c| l.weight(r, c) * a[c]).sum::<f64>())
            .collect();
        if k + 1 == layers.len() {
            break;
        }
        out.extend(&z);
        a = z.iter().map(|&v| v.max(0.0)).collect();
    }
    out
}

fn fd_case(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let act = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    // relu has kinks: resample until no pre-activation is close enough to
    // zero for a step of h to cross it
    let (net, batch, mask) = loop {
        let net = random_net(rng, act);
        let batch = random_batch(rng, &net);
        let mask = random_mask(rng, net.output_dim());
        if act == Activation::Relu
            && batch
                .iter()
                .any(|ex| hidden_preactivations(&net, &ex.input).iter().any(|z| z.abs() < 1e-3))
        {
            continue;
        }
        break (net, batch, mask);
    };
    let g: Gradients = net.gradient(&batch, &mask).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let loss = |n: &Network| n.masked_loss(&batch, &mask).unwrap();
    let mut checked = 0;
    for k in 0..net.layers().len() {
        let nw = net.layers()[k].weights().len();
        let nb = net.layers()[k].biases().len();
        for j in 0..nw + nb {
            let perturbed = |delta: f64| {
                let mut n = net.clone();
                let l = &mut n.layers_mut()[k];
                if j < nw {
                    l.weights_mut()[j] += delta;
                } else {
                    l.biases_mut()[j - nw] += delta;
                }
                n
            };
            let numeric = (loss(&perturbed(h)) - loss(&perturbed(-h))) / (2.0 * h);
            let analytic = if j < nw { g.weights[k][j] } else { g.biases[k][j - nw] };
            let tol = (1e-4 * analytic.abs().max(numeric.abs())).max(1e-8);
            if (analytic - numeric).abs() > tol {
                return Err(format!(
                    "layer {k} param {j}: analytic {analytic:e} numeric {numeric:e} ({act:?}, sizes {:?})",
                    net.layer_sizes()
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    let mut components = 0;
    for case in 0..100 {
        components += fd_case(&mut rng).map_err(|e| format!("case {case}: {e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("100 cases, {components} components, {elapsed:.2?}"))
}

fn mask_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3A5C);
    for case in 0..1000 {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let net = random_net(&mut rng, act);
        let batch = random_batch(&mut rng, &net);
        let mask = random_mask(&mut rng, net.output_dim());
        let lr = rng.random_range(1e-4..=1.0);
        let g = net.gradient(&batch, &mask).map_err(|e| e.to_string())?;
        let next = net.sgd_step(&g, lr).map_err(|e| e.to_string())?;
        let before = net.layers().last().unwrap();
        let after = next.layers().last().unwrap();
        for (i, &on) in mask.flags().iter().enumerate() {
            if on {
                continue;
            }
            let same_row = before
                .row(i)
                .iter()
                .zip(after.row(i))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            let same_bias = before.biases()[i].to_bits() == after.biases()[i].to_bits();
            ensure(same_row && same_bias, || format!("case {case}: output {i} changed"))?;
        }
    }
    Ok("1000 cases bit-identical".into())
}

// ------------------------------------------------------------ acquisition

#[derive(Debug, Clone, Copy)]
enum Event {
    Offer { t: f64 },
    Change { t: f64 },
    Commit { now: f64 },
}

fn dead_time_timeline(rng: &mut ChaCha8Rng, case: usize) -> Result<usize, String> {
    let n_events = if case % 10 == 0 {
        10_000
    } else {
        rng.random_range(1..=10_000)
    };
    let dead_time = 2.0 * rng.random_range(5..=60) as f64;
    let config = AcquisitionConfig {
        dead_time_s: dead_time,
        min_interval_s: rng.random_range(1..=10) as f64,
        change_fraction: Some(0.02),
        // the nearest-neighbour gate is quadratic in the buffer size; it is
        // exercised on the shorter timelines
        min_distance: if n_events <= 1500 { Some(0.05) } else { None },
        validation_fraction: 0.2,
        capacity: usize::MAX,
    };
    let mut buf = SampleBuffer::new(config.clone(), vec![1.0; 2], vec![1.0], 7 + case as u64).unwrap();
    let change_p = rng.random_range(0.001..0.05);
    let commit_p = rng.random_range(0.05..0.5);

    let mut t = 0.0;
    let mut events = Vec::with_capacity(n_events);
    let mut accepted: Vec<(u64, f64)> = Vec::new();
    let mut committed_by_buffer = BTreeSet::new();
    for _ in 0..n_events {
        t += rng.random_range(0..=4) as f64;
        let u: f64 = rng.random();
        let ev = if u < change_p {
            Event::Change { t }
        } else if u < change_p + commit_p {
            Event::Commit { now: t }
        } else {
            Event::Offer { t }
        };
        match ev {
            Event::Offer { t } => {
                let env = EnvSample::new(t, vec![rng.random_range(-5.0..5.0), rng.random_range(0.0..3.0)]);
                let sp = [rng.random_range(0.0..1.0)];
                if let OfferDecision::AcceptedPending { id } =
                    buf.offer_sample(&env, &sp, &[true]).map_err(|e| e.to_string())?
                {
                    accepted.push((id, t));
                }
            }
            Event::Change { t } => buf.notify_user_change(t, 0).map_err(|e| e.to_string())?,
            Event::Commit { now } => {
                let out = buf.commit_ready(now);
                ensure(out.windows(2).all(|w| w[0].env.timestamp <= w[1].env.timestamp), || {
                    "commit batch out of order".into()
                })?;
                committed_by_buffer.extend(out.iter().map(|s| s.id));
            }
        }
        events.push(ev);
    }

    // from-scratch oracle: a sample is committed iff no change lies strictly
    // within half the dead time of it and some commit call came at least
    // half the dead time after it
    let half = dead_time / 2.0;
    let changes: Vec<f64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Change { t } => Some(*t),
            _ => None,
        })
        .collect();
    let last_commit = events
        .iter()
        .filter_map(|e| match e {
            Event::Commit { now } => Some(*now),
            _ => None,
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let oracle: BTreeSet<u64> = accepted
        .iter()
        .filter(|(_, ts)| last_commit >= ts + half && changes.iter().all(|c| (c - ts).abs() >= half))
        .map(|(id, _)| *id)
        .collect();
    ensure(oracle == committed_by_buffer, || {
        let missing: Vec<_> = oracle.difference(&committed_by_buffer).take(5).collect();
        let extra: Vec<_> = committed_by_buffer.difference(&oracle).take(5).collect();
        format!("case {case}: missing {missing:?}, extra {extra:?}")
    })?;
    let stored: BTreeSet<u64> = buf.committed().iter().map(|s| s.id).collect();
    ensure(stored == oracle, || format!("case {case}: stored set differs from oracle"))?;
    // rate gate between consecutive accepted samples
    ensure(
        accepted.windows(2).all(|w| w[1].1 - w[0].1 >= config.min_interval_s),
        || format!("case {case}: rate gate violated"),
    )?;
    Ok(n_events)
}

fn dead_time_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xDEAD);
    let mut total = 0;
    for case in 0..1000 {
        total += dead_time_timeline(&mut rng, case)?;
    }
    Ok(format!("1000 timelines, {total} events, {:.2?}", start.elapsed()))
}

fn sampling_rate() -> Outcome {
    let start = Instant::now();
    let s = Scenario::reference(3600.0);
    let out = run_scenario(&s, LoopOptions::default()).map_err(|e| e.to_string())?;
    let n = out.summary.committed_samples;
    let elapsed = start.elapsed();
    ensure((180..=540).contains(&n), || format!("{n} committed samples"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{n} committed samples in 1 h, {elapsed:.2?}"))
}

// -------------------------------------------------------------- simulator

fn thermal_oracle() -> Outcome {
    let p = ThermalParams {
        heat_capacity: 100_000.0,
        k_env: 100.0,
        k_seat: 0.0,
        k_panel: 0.0,
        ..ThermalParams::default()
    };
    let mut s = CabinState::soaked(30.0, 40.0);
    let off = ActuatorState::default();
    let mut worst: f64 = 0.0;
    for n in 1..=3600 {
        s = thermal_step(&s, &off, 10.0, 0.0, 1.0, &p).map_err(|e| e.to_string())?;
        let exact = 10.0 + 20.0 * (-0.001 * n as f64).exp();
        worst = worst.max((s.cabin_temp - exact).abs() / exact);
    }
    ensure(worst < 0.01, || format!("max relative error {worst}"))?;
    Ok(format!("max relative error {worst:.2e} over 3600 steps"))
}

fn convergence_scenario() -> Scenario {
    let mut s = Scenario::reference(20.0 * 3600.0);
    s.estimator.auto_accept = true;
    s
}

fn convergence(run: &RunOutput, again: &RunOutput, elapsed: Duration) -> Outcome {
    let s = &run.summary;
    ensure(
        s.final_modes.iter().all(|&m| m == AutomationMode::Automated),
        || format!("final modes {:?}", s.final_modes),
    )?;
    let loss = s.final_validation_loss.clone().ok_or("no training round")?;
    ensure(loss.iter().all(|&l| l < 0.05), || format!("final validation loss {loss:?}"))?;
    let first = s.interventions_per_hour[0];
    let last = *s.interventions_per_hour.last().unwrap();
    ensure(first > 0, || "no interventions in the first hour".into())?;
    ensure(last as f64 <= 0.2 * first as f64, || format!("first hour {first}, last hour {last}"))?;
    ensure(
        run.metrics == again.metrics && run.rounds == again.rounds && run.summary == again.summary,
        || "second run differs".into(),
    )?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "automated {:?}, val loss {:.4?}, interventions first/last hour {first}/{last}, {elapsed:.2?} per run",
        s.final_automated, loss
    ))
}

fn handover_soundness(rounds: &[RoundRecord], required: usize) -> Outcome {
    let mut proposals = 0;
    for (k, r) in rounds.iter().enumerate() {
        for &i in &r.proposals {
            proposals += 1;
            ensure(k + 1 >= required, || format!("round {} proposes {i} too early", r.round))?;
            for prev in &rounds[k + 1 - required..=k] {
                let pass = prev.trained[i] && !prev.provisional[i] && prev.validation_loss[i] <= prev.loss_threshold[i];
                ensure(pass, || {
                    format!("proposal of {i} in round {} preceded by failing round {}", r.round, prev.round)
                })?;
            }
        }
    }
    ensure(proposals > 0, || "no proposals to check".into())?;
    Ok(format!("{proposals} proposals over {} rounds", rounds.len()))
}

// --------------------------------------------------------- publication

fn swap_under_load() -> Outcome {
    let slot = Arc::new(ModelSlot::new());
    let inputs = 5;
    let outputs = 3;
    // a model tagged with `v` answers `v` on every output
    let tagged = |v: u64| {
        let l = Layer::new(inputs, outputs, vec![0.0; inputs * outputs], vec![v as f64; outputs]).unwrap();
        Network::from_layers(vec![l], Activation::Tanh, 0).unwrap()
    };
    let norm = NormalizationStats::identity(inputs, outputs);
    slot.publish(tagged(1), norm.clone()).unwrap();
    let done = Arc::new(AtomicBool::new(false));
    let reads = Arc::new(AtomicU64::new(0));
    let readers: Vec<_> = (0..4)
        .map(|r| {
            let slot = Arc::clone(&slot);
            let done = Arc::clone(&done);
            let reads = Arc::clone(&reads);
            thread::spawn(move || -> Result<u64, String> {
                let mut last = 0;
                let x = vec![r as f64; inputs];
                while !done.load(Ordering::Acquire) {
                    let m = slot.load().ok_or("empty slot")?;
                    let y = m.predict(&x).map_err(|e| e.to_string())?;
                    let tag = m.version as f64;
                    if !y.iter().all(|v| v.is_finite() && *v == tag) {
                        return Err(format!("torn read: version {} output {y:?}", m.version));
                    }
                    if m.version < last {
                        return Err(format!("version went back from {last} to {}", m.version));
                    }
                    last = m.version;
                    reads.fetch_add(1, Ordering::Relaxed);
                }
                Ok(last)
            })
        })
        .collect();
    for v in 2..=1001u64 {
        let got = slot.publish(tagged(v), norm.clone()).map_err(|e| e.to_string())?;
        ensure(got == v, || format!("published version {got}, expected {v}"))?;
        if v % 100 == 0 {
            thread::yield_now();
        }
    }
    // a rejected candidate must not change what readers see
    let mut bad = tagged(0);
    bad.layers_mut()[0].biases_mut()[0] = f64::NAN;
    ensure(slot.publish(bad, norm).is_err(), || "NaN candidate accepted".into())?;
    ensure(slot.version() == 1001, || "rejected candidate bumped the version".into())?;
    thread::sleep(Duration::from_millis(20));
    done.store(true, Ordering::Release);
    for r in readers {
        r.join().map_err(|_| "reader panicked")??;
    }
    Ok(format!("1000 publications, {} tagged reads, 0 torn", reads.load(Ordering::Relaxed)))
}

// ------------------------------------------------------------ persistence

fn random_profile(rng: &mut ChaCha8Rng, k: usize) -> Profile {
    let env = EnvSchema::default();
    let sp = SetpointSchema::default();
    let mut sizes = vec![env.len()];
    for _ in 0..rng.random_range(0..=3) {
        sizes.push(rng.random_range(1..=16));
    }
    sizes.push(sp.len());
    let act = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let mut net = Network::new(&sizes, act, rng.random()).unwrap().with_version(rng.random_range(0..1 << 40));
    let awkward = |rng: &mut ChaCha8Rng| -> f64 {
        match rng.random_range(0..6) {
            0 => f64::from_bits(rng.random::<u64>() & 0x800F_FFFF_FFFF_FFFF), // subnormal
            1 => -0.0,
            2 => rng.random_range(-1e300..1e300),
            3 => rng.random_range(-1e-300..1e-300),
            4 => 0.1 + 0.2,
            _ => rng.random::<f64>() - 0.5,
        }
    };
    for l in net.layers_mut() {
        for w in l.weights_mut() {
            if rng.random_bool(0.3) {
                *w = awkward(rng);
            }
        }
        for b in l.biases_mut() {
            *b = awkward(rng);
        }
    }
    let mut norm = NormalizationStats::identity(env.len(), sp.len());
    for v in norm.env_mean.iter_mut().chain(norm.setpoint_mean.iter_mut()) {
        *v = awkward(rng);
    }
    for v in norm.env_std.iter_mut().chain(norm.setpoint_std.iter_mut()) {
        *v = rng.random_range(1e-6..100.0);
    }
    norm.sample_count = rng.random_range(0..100_000);
    let mut automation = AutomationState::all_manual(sp.len(), rng.random_range(1e-3..1.0));
    for s in &mut automation.setpoints {
        s.mode = [AutomationMode::Manual, AutomationMode::Proposed, AutomationMode::Automated][rng.random_range(0..3)];
        s.consecutive_passes = rng.random_range(0..10);
    }
    let created = rng.random_range(0.0..1e6);
    Profile {
        profile_id: format!("fuzz-{k}"),
        created_s: created,
        updated_s: created + rng.random_range(0.0..1e6),
        env_schema: env,
        setpoint_schema: sp,
        network: net,
        normalization: norm,
        acquisition: AcquisitionConfig {
            dead_time_s: rng.random_range(1.0..600.0),
            change_fraction: if rng.random_bool(0.5) { Some(rng.random_range(0.001..0.5)) } else { None },
            ..AcquisitionConfig::default()
        },
        automation,
        provenance: if rng.random_bool(0.5) {
            Provenance::Learned
        } else {
            Provenance::PretrainedLibrary
        },
    }
}

fn bits_equal(a: &Profile, b: &Profile) -> bool {
    let nets = a.network.layers().iter().zip(b.network.layers()).all(|(x, y)| {
        x.weights().iter().zip(y.weights()).all(|(p, q)| p.to_bits() == q.to_bits())
            && x.biases().iter().zip(y.biases()).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    let n = (&a.normalization, &b.normalization);
    let norms = [
        (&n.0.env_mean, &n.1.env_mean),
        (&n.0.env_std, &n.1.env_std),
        (&n.0.setpoint_mean, &n.1.setpoint_mean),
        (&n.0.setpoint_std, &n.1.setpoint_std),
    ]
    .iter()
    .all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    nets && norms && a.network.layer_sizes() == b.network.layer_sizes()
}

type Mutation = (&'static str, fn(&mut serde_json::Value));

/// Malformed documents derived from a valid one, each with the field the
/// loader has to blame.
fn malformed_fixtures() -> Vec<Mutation> {
    use serde_json::json;
    vec![
        ("schema_version", |v| drop(v.as_object_mut().unwrap().remove("schema_version"))),
        ("schema_version", |v| v["schema_version"] = json!("one")),
        ("profile_id", |v| v["profile_id"] = json!("  ")),
        ("profile_id", |v| v["profile_id"] = json!(17)),
        ("updated_s", |v| v["updated_s"] = json!(-5.0)),
        ("created_s", |v| v["created_s"] = json!("yesterday")),
        ("provenance", |v| v["provenance"] = json!("downloaded")),
        ("comment", |v| v["comment"] = json!("hand edited")),
        ("", |v| drop(v.as_object_mut().unwrap().remove("network"))),
        ("network.momentum", |v| v["network"]["momentum"] = json!(0.9)),
        ("network.layer_sizes[0]", |v| v["network"]["layer_sizes"][0] = json!(4)),
        ("network.layer_sizes[1]", |v| v["network"]["layer_sizes"][1] = json!(0)),
        ("network.layer_sizes", |v| v["network"]["layer_sizes"] = json!([5])),
        ("network.layer_sizes[0]", |v| v["network"]["layer_sizes"][0] = json!(-5)),
        ("network.output_activation", |v| v["network"]["output_activation"] = json!("sigmoid")),
        ("network.hidden_activation", |v| v["network"]["hidden_activation"] = json!("gelu")),
        ("network.version", |v| v["network"]["version"] = json!(-1)),
        ("network.layers", |v| drop(v["network"]["layers"].as_array_mut().unwrap().pop())),
        ("network.layers[0].weights", |v| {
            drop(v["network"]["layers"][0]["weights"].as_array_mut().unwrap().pop())
        }),
        ("network.layers[1].weights", |v| {
            v["network"]["layers"][1]["weights"].as_array_mut().unwrap().push(json!([0.0, 0.0, 0.0, 0.0]))
        }),
        ("network.layers[0].weights[2]", |v| {
            v["network"]["layers"][0]["weights"][2].as_array_mut().unwrap().push(json!(1.0))
        }),
        ("network.layers[1].weights[0]", |v| {
            drop(v["network"]["layers"][1]["weights"][0].as_array_mut().unwrap().pop())
        }),
        ("network.layers[0].weights[1][2]", |v| v["network"]["layers"][0]["weights"][1][2] = json!("NaN")),
        ("network.layers[0].weights[1][2]", |v| v["network"]["layers"][0]["weights"][1][2] = json!(null)),
        ("network.layers[1].weights[0][0]", |v| v["network"]["layers"][1]["weights"][0][0] = json!([1.0])),
        ("network.layers[0].biases", |v| v["network"]["layers"][0]["biases"].as_array_mut().unwrap().push(json!(0.0))),
        ("network.layers[1].biases", |v| drop(v["network"]["layers"][1]["biases"].as_array_mut().unwrap().pop())),
        ("network.layers[1].biases[1]", |v| v["network"]["layers"][1]["biases"][1] = json!("inf")),
        ("network.layers[0].scale", |v| v["network"]["layers"][0]["scale"] = json!(2.0)),
        ("network.layers[0]", |v| drop(v["network"]["layers"][0].as_object_mut().unwrap().remove("biases"))),
        ("normalization.env_mean", |v| drop(v["normalization"]["env_mean"].as_array_mut().unwrap().pop())),
        ("normalization.env_std[3]", |v| v["normalization"]["env_std"][3] = json!(0.0)),
        ("normalization.setpoint_std[0]", |v| v["normalization"]["setpoint_std"][0] = json!(-1.0)),
        ("normalization.setpoint_mean", |v| v["normalization"]["setpoint_mean"].as_array_mut().unwrap().push(json!(1.0))),
        ("normalization.sample_count", |v| v["normalization"]["sample_count"] = json!(-3)),
        ("normalization.median", |v| v["normalization"]["median"] = json!([0.0])),
        ("acquisition", |v| v["acquisition"]["dead_time_s"] = json!(0.0)),
        ("acquisition", |v| v["acquisition"]["validation_fraction"] = json!(1.5)),
        ("acquisition.rate", |v| v["acquisition"]["rate"] = json!(0.1)),
        ("acquisition.capacity", |v| v["acquisition"]["capacity"] = json!(1.5)),
        ("automation.setpoints", |v| drop(v["automation"]["setpoints"].as_array_mut().unwrap().pop())),
        ("automation.setpoints[1].mode", |v| v["automation"]["setpoints"][1]["mode"] = json!("half")),
        ("automation.setpoints[2].loss_threshold", |v| v["automation"]["setpoints"][2]["loss_threshold"] = json!(0.0)),
        ("automation.setpoints[0].consecutive_passes", |v| {
            v["automation"]["setpoints"][0]["consecutive_passes"] = json!(-2)
        }),
        ("env_schema.channels", |v| v["env_schema"]["channels"] = json!([])),
        ("env_schema.channels[1].scale", |v| v["env_schema"]["channels"][1]["scale"] = json!(0.0)),
        ("env_schema.channels[2].name", |v| v["env_schema"]["channels"][2]["name"] = json!("cabin_temp")),
        ("network.layer_sizes[0]", |v| drop(v["env_schema"]["channels"].as_array_mut().unwrap().pop())),
        ("setpoint_schema.setpoints[0]", |v| v["setpoint_schema"]["setpoints"][0]["min"] = json!(40.0)),
        ("network.layer_sizes[2]", |v| {
            let extra = v["setpoint_schema"]["setpoints"][0].clone();
            v["setpoint_schema"]["setpoints"].as_array_mut().unwrap().push(extra)
        }),
    ]
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E75);
    for k in 0..200 {
        let p = random_profile(&mut rng, k);
        let path = dir.path().join(format!("p{k}.json"));
        save_profile(&p, &path).map_err(|e| format!("profile {k}: {e}"))?;
        let back = load_profile(&path).map_err(|e| format!("profile {k}: {e}"))?;
        ensure(back == p && bits_equal(&back, &p), || format!("profile {k} changed in round trip"))?;
    }

    // one valid [5, 4, 3] profile as the base for all malformed documents
    let mut base = random_profile(&mut ChaCha8Rng::seed_from_u64(1), 0);
    base.network = Network::new(&[5, 4, 3], Activation::Tanh, 3).unwrap();
    let base_json: serde_json::Value = serde_json::from_str(&base.to_json().unwrap()).unwrap();
    let fixtures = malformed_fixtures();
    ensure(fixtures.len() == 50, || format!("{} fixtures", fixtures.len()))?;
    let mut wrong = Vec::new();
    for (n, (field, mutate)) in fixtures.iter().enumerate() {
        let mut v = base_json.clone();
        mutate(&mut v);
        match Profile::from_json(&v.to_string()) {
            Ok(_) => wrong.push(format!("fixture {n} ({field}) accepted")),
            Err(e) if e.field() != Some(*field) => {
                wrong.push(format!("fixture {n}: expected field `{field}`, got {:?} ({e})", e.field()))
            }
            Err(_) => {}
        }
    }
    ensure(wrong.is_empty(), || wrong.join("; "))?;

    // crash between write and rename: previous file intact and loadable
    let path = dir.path().join("crash.json");
    let first = random_profile(&mut rng, 1000);
    save_profile(&first, &path).map_err(|e| e.to_string())?;
    let before = std::fs::read(&path).map_err(|e| e.to_string())?;
    for k in 0..20 {
        let next = random_profile(&mut rng, 2000 + k).to_json().map_err(|e| e.to_string())?;
        let cut = rng.random_range(0..next.len());
        let r = write_atomic(&path, &next.as_bytes()[..cut], |_| Err(std::io::Error::other("crash")));
        ensure(matches!(r, Err(ProfileError::Io { .. })), || "crash not reported".into())?;
        ensure(std::fs::read(&path).map_err(|e| e.to_string())? == before, || "prior file modified".into())?;
        ensure(load_profile(&path).map_err(|e| e.to_string())? == first, || "prior file unloadable".into())?;
    }
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    ensure(leftovers == 201, || format!("{leftovers} files left, temporary files leaked"))?;
    Ok("200 round trips bit-exact, 50/50 malformed rejected with field paths, 20 crashed saves harmless".into())
}

// ----------------------------------------------------------------- library

fn shipped_library() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../library")
}

fn pretrained_library() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    generate_library(a.path()).map_err(|e| e.to_string())?;
    generate_library(b.path()).map_err(|e| e.to_string())?;
    for t in UserType::ALL {
        let x = std::fs::read(library_path(a.path(), t)).map_err(|e| e.to_string())?;
        let y = std::fs::read(library_path(b.path(), t)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{t}: regeneration differs"))?;
        let shipped = std::fs::read(library_path(&shipped_library(), t)).map_err(|e| format!("shipped {t}: {e}"))?;
        ensure(x == shipped, || format!("{t}: shipped fixture differs from regeneration"))?;
    }

    let mut matrix = Vec::new();
    for p in UserType::ALL {
        let profile = load_profile(&library_path(a.path(), p)).map_err(|e| e.to_string())?;
        let row: Vec<f64> = UserType::ALL
            .iter()
            .map(|&d| {
                let opts = LoopOptions {
                    mode: RunMode::Eval,
                    start: Some(profile.start_model()),
                    ..LoopOptions::default()
                };
                run_scenario(&eval_scenario(d), opts).map(|o| o.eval.expect("eval report").comfort_error)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        matrix.push(row);
    }
    for (i, p) in UserType::ALL.iter().enumerate() {
        // each driver is served best by its own archetype's profile
        for j in 0..3 {
            if j != i {
                ensure(matrix[i][i] < matrix[j][i], || {
                    format!("driver {p}: own profile {:.4} vs {} {:.4}", matrix[i][i], UserType::ALL[j], matrix[j][i])
                })?;
            }
        }
        // and each profile does best on its own driver
        ensure(
            (0..3).all(|j| j == i || matrix[i][i] < matrix[i][j]),
            || format!("profile {p} row {:?}", matrix[i]),
        )?;
    }
    let diag: Vec<String> = (0..3).map(|i| format!("{:.4}", matrix[i][i])).collect();
    Ok(format!("byte-identical regeneration, diagonal comfort error {}", diag.join("/")))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("gradient correctness", gradient_correctness()));
    results.push(("mask invariant", mask_invariant()));
    results.push(("dead-time oracle equivalence", dead_time_oracle()));
    results.push(("sampling rate", sampling_rate()));
    results.push(("thermal oracle", thermal_oracle()));

    let scenario = convergence_scenario();
    let start = Instant::now();
    let first = run_scenario(&scenario, LoopOptions::default());
    let elapsed = start.elapsed();
    let second = run_scenario(&scenario, LoopOptions::default());
    match (first, second) {
        (Ok(a), Ok(b)) => {
            results.push(("end-to-end convergence", convergence(&a, &b, elapsed)));
            let required = scenario.estimator.required_passes as usize;
            results.push(("handover soundness", handover_soundness(&a.rounds, required)));
        }
        (Err(e), _) | (_, Err(e)) => {
            results.push(("end-to-end convergence", Err(e.to_string())));
            results.push(("handover soundness", Err("no run to replay".into())));
        }
    }

    results.push(("swap under load", swap_under_load()));
    results.push(("persistence", persistence()));
    results.push(("pretrained library", pretrained_library()));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
