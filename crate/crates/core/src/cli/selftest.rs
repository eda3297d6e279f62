//! Quick invariant checks behind `qecc-lab selftest`.

use rand::Rng;

use super::{CmdResult, Failure, Io};
use crate::autodiff::{check_gradients, check_param_gradients, Tape, Tensor};
use crate::codes::{CheckKind, Sector, StabilizerCode};
use crate::dataset::sample_runs;
use crate::error::Error;
use crate::gf2::{BitMatrix, BitVector};
use crate::matching::{brute_force_min_matching, min_weight_perfect_matching, DefectGraph};
use crate::model::{total_loss, xor_projection, Batch, NeuralModel, Qecct, QecctConfig};
use crate::mwpm::MwpmDecoder;
use crate::noise::{Channel, PauliError, StreamRng};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: crate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn codes(seed: u64) -> Check {
    let mut rng = StreamRng::derive(seed, &[1]);
    let mut checked = 0;
    for l in 2..=5 {
        for code in [lift(StabilizerCode::toric(l))?, lift(StabilizerCode::surface(l))?] {
            let label = code.label();
            let stabs = code.stabilizers_as_errors();
            for _ in 0..200 {
                let mut v = BitVector::zeros(code.n_err());
                for r in 0..stabs.rows() {
                    if rng.random::<bool>() {
                        lift(v.xor_assign(&stabs.row(r)))?;
                    }
                }
                let e = PauliError::from_vector(&v);
                ensure(lift(code.syndrome(&e))?.is_zero(), || format!("{label}: stabilizer has a syndrome"))?;
                ensure(lift(code.logical_projection(&e))?.is_zero(), || {
                    format!("{label}: stabilizer flips a logical")
                })?;
                checked += 1;
            }
            if code.family() == crate::codes::CodeFamily::Toric {
                let h = code.parity_check();
                for (r, check) in code.checks().iter().enumerate() {
                    ensure(h.row_weight(r) == 4, || format!("{label}: check {r} has weight {}", h.row_weight(r)))?;
                    ensure(check.qubits.len() == 4, || format!("{label}: check {r} touches {} qubits", check.qubits.len()))?;
                }
                for (kind, m) in [(CheckKind::Z, code.hz()), (CheckKind::X, code.hx())] {
                    ensure(m.rank() == l * l - 1, || format!("{label}: {kind:?} block has rank {}", m.rank()))?;
                    ensure((0..m.cols()).all(|c| m.col_weight(c) == 2), || format!("{label}: {kind:?} column weight"))?;
                }
            }
        }
    }
    Ok(format!("{checked} random stabilizers invisible; toric weights and ranks"))
}

fn matching(seed: u64) -> Check {
    let mut rng = StreamRng::derive(seed, &[2]);
    let mut n_graphs = 0;
    for _ in 0..200 {
        let n = 2 * rng.random_range(1..=4);
        let mut g = DefectGraph::new(DefectGraph::complete(n, |_, _| 0).nodes().to_vec());
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.8) {
                    lift(g.add_edge(i, j, rng.random_range(0..20)))?;
                }
            }
        }
        let brute = brute_force_min_matching(&g);
        let blossom = min_weight_perfect_matching(&g).ok().map(|m| m.total_weight);
        ensure(brute == blossom, || format!("graph {n_graphs}: blossom {blossom:?} vs exhaustive {brute:?}"))?;
        n_graphs += 1;
    }
    Ok(format!("{n_graphs} random graphs match the exhaustive minimum"))
}

fn mwpm(seed: u64) -> Check {
    let mut count = 0;
    for code in [lift(StabilizerCode::toric(5))?, lift(StabilizerCode::surface(5))?] {
        let decoder = lift(MwpmDecoder::new(&code, Sector::Joint))?;
        for channel in [Channel::Independent, Channel::Depolarizing] {
            let runs = lift(sample_runs(&code, channel, 0.1, 0.0, 1, 300, seed))?;
            for run in &runs {
                let c = PauliError::from_vector(&lift(decoder.decode_syndrome(run.final_syndrome()))?);
                ensure(&lift(code.syndrome(&c))? == run.final_syndrome(), || {
                    format!("{} {channel}: correction misses the syndrome", code.label())
                })?;
                count += 1;
            }
        }
    }
    Ok(format!("{count} corrections reproduce their syndromes"))
}

fn xor(seed: u64) -> Check {
    let mut rng = StreamRng::derive(seed, &[4]);
    let (k, n) = (3, 5);
    let l = BitMatrix::from_dense(
        &(0..k)
            .map(|_| (0..n).map(|_| rng.random_range(0..2u8)).collect())
            .collect::<Vec<Vec<u8>>>(),
    );
    for bits in 0..1u32 << n {
        let x: Vec<f64> = (0..n).map(|i| ((bits >> i) & 1) as f64).collect();
        let v = BitVector::from_bools(x.iter().map(|&b| b == 1.0));
        let expect = lift(l.matvec(&v))?;
        let mut tape = Tape::<f64>::new();
        let xs = tape.leaf(lift(Tensor::from_vec(&[1, n], x))?);
        let out = lift(xor_projection(&mut tape, &l, xs))?;
        let got = tape.value(out).data().to_vec();
        ensure((0..k).all(|j| got[j] == expect.get(j) as u8 as f64), || {
            format!("input {bits:0n$b}: {got:?} vs {:?}", expect.to_bits())
        })?;
    }
    let soft = lift(Tensor::from_vec(&[2, n], (0..2 * n).map(|_| rng.random_range(0.05..0.95)).collect()))?;
    let r = lift(check_gradients(&[soft], 1e-4, 1e-8, |tape, v| {
        let y = xor_projection(tape, &l, v[0])?;
        let w = tape.constant(Tensor::from_vec(&[2, k], (0..2 * k).map(|i| 0.3 + i as f64).collect())?);
        let prod = tape.mul(y, w)?;
        Ok(tape.sum(prod))
    }))?;
    ensure(r.max_rel_err <= 1e-6, || format!("xor gradient error {:.2e}", r.max_rel_err))?;
    Ok(format!("xor matches GF(2) on all {} inputs; gradient error {:.1e}", 1 << n, r.max_rel_err))
}

fn model(seed: u64) -> Check {
    let code = lift(StabilizerCode::toric(3))?;
    let view = code.view(Sector::X);
    let cfg = QecctConfig {
        heads: 2,
        ..QecctConfig::new(2, 8)
    };
    let mut qecct = lift(Qecct::<f64>::new(cfg, view.clone(), seed))?;
    let runs = lift(sample_runs(&code, Channel::Independent, 0.1, 0.05, 3, 2, seed))?;
    let batch = lift(Batch::<f64>::from_runs(&view, &runs))?;

    let logits = |m: &Qecct<f64>, b: &Batch<f64>| -> std::result::Result<Vec<f64>, String> {
        let mut tape = Tape::new();
        let out = lift(m.forward(&mut tape, b))?;
        Ok(tape.value(out.noise_logits).data().to_vec())
    };
    let base = logits(&qecct, &batch)?;
    let permuted = batch.with_round_order(&[2, 0, 1]);
    let diff = base
        .iter()
        .zip(logits(&qecct, &permuted)?)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(diff <= 1e-6, || format!("round permutation changed logits by {diff:.2e}"))?;

    let objective = qecct.objective();
    let m = qecct.clone();
    let r = lift(check_param_gradients(qecct.params_mut(), 1e-5, 1e-6, 3, |tape, store| {
        let mut m = m.clone();
        *m.params_mut() = store.clone();
        let out = m.forward(tape, &batch)?;
        Ok(total_loss(tape, &objective, &view.logicals, &out, &batch)?.total)
    }))?;
    ensure(r.max_rel_err <= 1e-4, || format!("gradient error {:.2e} at {:?}", r.max_rel_err, r.worst))?;
    Ok(format!(
        "round order invariant ({diff:.1e}); {} gradient entries within {:.1e}",
        r.checked, r.max_rel_err
    ))
}

fn sampling(seed: u64) -> Check {
    let code = lift(StabilizerCode::toric(4))?;
    let a = lift(sample_runs(&code, Channel::Depolarizing, 0.1, 0.05, 4, 64, seed))?;
    let b = lift(sample_runs(&code, Channel::Depolarizing, 0.1, 0.05, 4, 64, seed))?;
    ensure(a == b, || "same seed gave different runs".into())?;
    for run in &a {
        ensure(lift(run.is_consistent(&code))?, || "run is not self-consistent".into())?;
    }
    Ok(format!("{} runs reproducible and consistent", a.len()))
}

pub(super) fn run(seed: u64, io: &mut Io<'_>) -> CmdResult {
    let suites: [(&str, fn(u64) -> Check); 6] = [
        ("codes", codes),
        ("matching", matching),
        ("mwpm", mwpm),
        ("xor", xor),
        ("model", model),
        ("sampling", sampling),
    ];
    let mut failed = Vec::new();
    for (name, suite) in suites {
        match suite(seed) {
            Ok(msg) => writeln!(io.out, "ok   {name}: {msg}")?,
            Err(msg) => {
                writeln!(io.out, "FAIL {name}: {msg}")?;
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::NumericFailure(format!(
            "selftest failed: {}",
            failed.join(", ")
        ))))
    }
}
