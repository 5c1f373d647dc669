//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run
//! unless `RCCL_ACCEPTANCE_STRICT=1`; see the README for why they are red.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rccl::corpus::{self, Split, StanceLabel};
use rccl::encoder::{self, Batch, ContrastGroup, Dims, EncoderParams};
use rccl::eval;
use rccl::losses::{self, ContrastConfig, Metric};
use rccl::maskfill::{self, CounterfactualSample};
use rccl::seed::{self, child_rng};
use rccl::synthlab::{self, SynthConfig};
use rccl::textproc::{self, AliasMap, TokenId, NUM_RESERVED};
use rccl::train::{self, build_contrast_set, relabel};
use rccl::{NegativeStrategy, TokenizedDataset, TokenizedSample, TrainConfig};
use rccl_cli::{dispatch, Command, RunConfig};

const KNOWN_RED: &[&str] = &["synthetic debiasing (b)"];

const LABELS: [StanceLabel; 3] = StanceLabel::ALL;

struct Line {
    name: String,
    status: Status,
    detail: String,
}

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

fn line(name: &str, pass: bool, detail: String) -> Line {
    Line {
        name: name.into(),
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn sample(id: String, target: Vec<TokenId>, comment: Vec<TokenId>, exempt: BTreeSet<usize>) -> TokenizedSample {
    TokenizedSample { id, target, comment, exempt }
}

fn random_seq(rng: &mut seed::Rng, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.gen_range(NUM_RESERVED..vocab as TokenId)).collect()
}

// Reference forward pass written out from the model definition.
fn oracle_proba(p: &EncoderParams, s: &TokenizedSample) -> [f64; 3] {
    let Dims { d, m, .. } = p.dims;
    let mut seq = s.target.clone();
    seq.push(textproc::SEP);
    seq.extend(&s.comment);
    let mut e = vec![0.0; d];
    for &t in &seq {
        for k in 0..d {
            e[k] += p.embedding[t as usize * d + k] / seq.len() as f64;
        }
    }
    let h: Vec<f64> = (0..m)
        .map(|j| (p.b_h[j] + (0..d).map(|k| p.w_h[j * d + k] * e[k]).sum::<f64>()).tanh())
        .collect();
    let z: Vec<f64> = (0..3).map(|c| p.b_c[c] + (0..m).map(|j| p.w_c[c * m + j] * h[j]).sum::<f64>()).collect();
    let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
    let ez: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let total: f64 = ez.iter().sum();
    [ez[0] / total, ez[1] / total, ez[2] / total]
}

fn gradient_check() -> Line {
    const STEP: f64 = 1e-4;
    // relative error denominator floor for near-zero partials
    const FLOOR: f64 = 1e-6;
    let dims = Dims { vocab: 50, d: 8, m: 8 };
    let mut worst = 0.0f64;
    let mut resampled = 0;
    for inst in 0..100u64 {
        let mut attempt = 0u64;
        let (p, examples, groups, cfg) = loop {
            let mut rng = child_rng(inst, &[attempt]);
            let p = EncoderParams::init_uniform(dims, rng.gen(), 0.5);
            let mut mk = |i: usize| {
                let t = rng.gen_range(1..3);
                let c = rng.gen_range(2..9);
                sample(format!("s{i}"), random_seq(&mut rng, 50, t), random_seq(&mut rng, 50, c), BTreeSet::new())
            };
            let samples: Vec<TokenizedSample> = (0..14).map(&mut mk).collect();
            let cfg = ContrastConfig {
                margin: rng.gen_range(0.2..1.5),
                gamma: rng.gen_range(0.1..1.0),
                metric: if inst % 2 == 0 { Metric::CosineDistance } else { Metric::Euclidean },
                positives: 2,
                negatives: 2,
            };
            let labels: Vec<StanceLabel> = (0..4).map(|_| LABELS[rng.gen_range(0..3)]).collect();
            // the hinge has a kink at zero; keep instances clear of it
            let clear = (0..2).all(|g| {
                let b = 4 + g * 5;
                let h = encoder::encode(&p, &samples[b]).unwrap();
                let enc = |r: std::ops::Range<usize>| {
                    r.map(|i| encoder::encode(&p, &samples[i]).unwrap()).collect::<Vec<_>>()
                };
                let arg = losses::hinge_argument(&h.0, &enc(b + 1..b + 3), &enc(b + 3..b + 5), &cfg).unwrap();
                arg.abs() > 1e-3
            });
            if clear {
                break (p, samples[..4].to_vec(), samples[4..].to_vec(), (cfg, labels));
            }
            attempt += 1;
            resampled += 1;
        };
        let (cfg, labels) = cfg;
        let group_refs: Vec<ContrastGroup> = (0..2)
            .map(|g| ContrastGroup {
                anchor: &groups[g * 5],
                positives: vec![&groups[g * 5 + 1], &groups[g * 5 + 2]],
                negatives: vec![&groups[g * 5 + 3], &groups[g * 5 + 4]],
            })
            .collect();
        let batch = Batch {
            examples: examples.iter().zip(&labels).map(|(s, &y)| (s, y)).collect(),
            groups: group_refs,
        };
        let (_, grad) = encoder::gradients(&p, &batch, &cfg).unwrap();
        let mut q = p.clone();
        for i in 0..p.num_params() {
            let x = p.get_flat(i);
            q.set_flat(i, x + STEP);
            let up = encoder::batch_loss(&q, &batch, &cfg).unwrap().total;
            q.set_flat(i, x - STEP);
            let down = encoder::batch_loss(&q, &batch, &cfg).unwrap().total;
            q.set_flat(i, x);
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grad.get_flat(i);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    line(
        "gradient correctness",
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 instances ({resampled} resampled off the hinge kink)"),
    )
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn loss_oracles() -> Line {
    let mut worst = 0.0f64;
    let mut exact = true;
    for i in 0..1000u64 {
        let mut rng = child_rng(7, &[i]);
        let dim = rng.gen_range(1..10);
        let mut v = || (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let h = v();
        let np = 1 + (i as usize % 4);
        let nq = 1 + (i as usize / 4 % 4);
        let pos: Vec<Vec<f64>> = (0..np).map(|_| v()).collect();
        let neg: Vec<Vec<f64>> = (0..nq).map(|_| v()).collect();
        let metric = if i % 2 == 0 { Metric::CosineDistance } else { Metric::Euclidean };
        let dist = if i % 2 == 0 { cosine } else { euclid };
        let cfg = ContrastConfig { margin: rng.gen_range(0.0..2.0), gamma: rng.gen_range(0.0..1.0), metric, positives: np, negatives: nq };
        let mp = pos.iter().map(|p| dist(&h, p)).sum::<f64>() / np as f64;
        let mq = neg.iter().map(|q| dist(&h, q)).sum::<f64>() / nq as f64;
        let want = (cfg.margin + mp - mq).max(0.0);
        let got = losses::contrastive_loss(&h, &pos, &neg, &cfg).unwrap();
        worst = worst.max((got - want).abs());

        let raw: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(1e-15..1.0)];
        let total: f64 = raw.iter().sum();
        let mut probs = raw.map(|x| x / total);
        if i % 50 == 0 {
            probs = [1e-14, 0.5, 0.5 - 1e-14];
        }
        let y = LABELS[i as usize % 3];
        let ce_want = -(probs[y.index()].max(1e-12)).ln();
        let ce = losses::cross_entropy(&probs, y);
        worst = worst.max((ce - ce_want).abs());
        worst = worst.max((losses::total_loss(ce, got, cfg.gamma) - (ce_want + cfg.gamma * want)).abs());

        // hinge inactive: positives at the anchor, negatives far away
        let far: Vec<Vec<f64>> = vec![h.iter().map(|x| -x).collect()];
        let at: Vec<Vec<f64>> = vec![h.clone()];
        let inactive = ContrastConfig { margin: 0.0, metric: Metric::Euclidean, ..cfg };
        exact &= h.iter().all(|x| *x == 0.0) || losses::contrastive_loss(&h, &at, &far, &inactive).unwrap() == 0.0;
        // identical sets leave exactly the margin; swapping sets negates the gap
        exact &= losses::contrastive_loss(&h, &pos, &pos, &cfg).unwrap() == cfg.margin;
        let zero = ContrastConfig { margin: 0.0, ..cfg };
        let a = losses::hinge_argument(&h, &pos, &neg, &zero).unwrap();
        let b = losses::hinge_argument(&h, &neg, &pos, &zero).unwrap();
        exact &= a == -b;
    }
    line(
        "loss oracles",
        worst <= 1e-12 && exact,
        format!("max abs error {worst:.2e} on 1000 inputs; exact cases {}", if exact { "hold" } else { "broken" }),
    )
}

fn round_half_up(k: usize, n: usize) -> usize {
    // count for ratio k/20 over n positions
    if k == 0 || n == 0 {
        return 0;
    }
    ((2 * k * n + 20) / 40).clamp(1, n)
}

fn masking_safety() -> Line {
    let mut violations = 0usize;
    let mut checked = 0usize;
    let check = |s: &TokenizedSample, ratio: f64, seed: u64, expected: usize, violations: &mut usize| {
        match maskfill::mask(s, ratio, seed) {
            Ok(m) => {
                let bad_pos = m.masked_positions.iter().any(|p| s.exempt.contains(p));
                let unmasked_changed = s
                    .comment
                    .iter()
                    .enumerate()
                    .any(|(i, &t)| !m.masked_positions.contains(&i) && m.comment[i] != t);
                if bad_pos || unmasked_changed || m.masked_positions.len() != expected {
                    *violations += 1;
                }
            }
            Err(rccl::Error::GenerationImpossible(_)) if expected > 0 || ratio > 0.0 => {
                if s.comment.len() > s.exempt.len() {
                    *violations += 1;
                }
            }
            Err(_) => *violations += 1,
        }
    };
    for i in 0..10_000u64 {
        let mut rng = child_rng(11, &[i]);
        let len = rng.gen_range(1..60);
        let exempt: BTreeSet<usize> = (0..len).filter(|_| rng.gen_bool(0.3)).collect();
        let s = sample(format!("f{i}"), vec![4], random_seq(&mut rng, 40, len), exempt);
        let ratio: f64 = if i % 10 == 0 { 0.0 } else { rng.gen_range(0.0..=1.0) };
        let avail = len - s.exempt.len();
        let expected = if ratio == 0.0 || avail == 0 { 0 } else { ((ratio * avail as f64 + 0.5).floor() as usize).clamp(1, avail) };
        check(&s, ratio, rng.gen(), expected, &mut violations);
        checked += 1;
    }
    for len in 1..=50usize {
        for k in 0..=20usize {
            for rep in 0..3u64 {
                let mut rng = child_rng(13, &[len as u64, k as u64, rep]);
                let exempt: BTreeSet<usize> = match rep {
                    0 => BTreeSet::new(),
                    _ => (0..len).filter(|_| rng.gen_bool(0.25)).collect(),
                };
                let s = sample("e".into(), vec![4], random_seq(&mut rng, 40, len), exempt);
                let avail = len - s.exempt.len();
                check(&s, k as f64 / 20.0, rng.gen(), round_half_up(k, avail), &mut violations);
                checked += 1;
            }
        }
    }
    line("masking safety", violations == 0, format!("{violations} violations in {checked} cases"))
}

fn relabel_partition() -> Line {
    let mut mismatches = 0usize;
    for g in 0..500u64 {
        let mut rng = child_rng(17, &[g]);
        let p = EncoderParams::init_uniform(Dims { vocab: 30, d: 6, m: 5 }, rng.gen(), 1.5);
        let n = rng.gen_range(0..25);
        let cands: Vec<CounterfactualSample> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..6);
                CounterfactualSample {
                parent_id: "a".into(),
                target: vec![4],
                comment: random_seq(&mut rng, 30, len),
                masked_positions: vec![0],
                predicted_label: None,
                confidence: 0.0,
                duplicate: false,
            }})
            .collect();
        let threshold = [0.0, 0.34, 0.5, 0.7, 0.9][g as usize % 5];
        let mut want = Vec::new();
        for c in &cands {
            let probs = oracle_proba(&p, &c.to_tokenized());
            let mut best = 0;
            for k in 1..3 {
                if probs[k] > probs[best] {
                    best = k;
                }
            }
            if probs[best] >= threshold {
                want.push((LABELS[best], probs[best]));
            }
        }
        let got = relabel(&p, cands, threshold).unwrap();
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(c, (l, conf))| c.predicted_label == Some(*l) && (c.confidence - conf).abs() <= 1e-12);
        if !same {
            mismatches += 1;
        }

        // partition oracle on coarse confidences so ties are common
        let mut pool: Vec<CounterfactualSample> = got;
        for (i, c) in pool.iter_mut().enumerate() {
            c.parent_id = format!("c{i}");
            c.confidence = [0.7, 0.8, 0.9][rng.gen_range(0..3)];
            c.predicted_label = Some(LABELS[rng.gen_range(0..3)]);
        }
        let anchor = LABELS[rng.gen_range(0..3)];
        let (pk, qk) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let set = build_contrast_set("a", anchor, &pool, pk, qk);
        let top = |same: bool, k: usize| -> Vec<String> {
            let mut idx: Vec<usize> =
                (0..pool.len()).filter(|&i| (pool[i].predicted_label == Some(anchor)) == same).collect();
            idx.sort_by(|&a, &b| pool[b].confidence.partial_cmp(&pool[a].confidence).unwrap().then(a.cmp(&b)));
            idx.into_iter().take(k).map(|i| pool[i].parent_id.clone()).collect()
        };
        let ids = |v: &[CounterfactualSample]| v.iter().map(|c| c.parent_id.clone()).collect::<Vec<_>>();
        let (wp, wn) = (top(true, pk), top(false, qk));
        if ids(&set.positives) != wp || ids(&set.negatives) != wn || set.active != (!wp.is_empty() && !wn.is_empty()) {
            mismatches += 1;
        }
    }
    line("relabel/partition equivalence", mismatches == 0, format!("{mismatches} mismatching groups of 500"))
}

fn interventional() -> Line {
    // six fillable tokens after the reserved ids
    let vocab = NUM_RESERVED as usize + 6;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for i in 0..200u64 {
        let mut rng = child_rng(19, &[i]);
        let p = EncoderParams::init_uniform(Dims { vocab, d: 4, m: 3 }, rng.gen(), 1.0);
        let len = rng.gen_range(1..6);
        let masks = 1 + (i as usize % 2);
        if len < masks {
            continue;
        }
        let s = sample("x".into(), vec![NUM_RESERVED], random_seq(&mut rng, vocab, len), BTreeSet::new());
        let ratio = masks as f64 / len as f64;
        let mask_seed = rng.gen();
        let got = eval::predict_interventional_exhaustive(&p, &s, ratio, mask_seed).unwrap();
        let blanks = maskfill::mask(&s, ratio, mask_seed).unwrap().masked_positions;
        assert_eq!(blanks.len(), masks);
        let mut sum = [0.0; 3];
        let mut count = 0.0;
        let fills: Vec<Vec<TokenId>> = match masks {
            1 => (NUM_RESERVED..vocab as TokenId).map(|a| vec![a]).collect(),
            _ => (NUM_RESERVED..vocab as TokenId)
                .flat_map(|a| (NUM_RESERVED..vocab as TokenId).map(move |b| vec![a, b]))
                .collect(),
        };
        for f in fills {
            let mut c = s.clone();
            for (&pos, &t) in blanks.iter().zip(&f) {
                c.comment[pos] = t;
            }
            let pr = oracle_proba(&p, &c);
            for k in 0..3 {
                sum[k] += pr[k];
            }
            count += 1.0;
        }
        for k in 0..3 {
            worst = worst.max((got.mean[k] - sum[k] / count).abs());
        }
        cases += 1;
    }
    line("interventional predictor", worst <= 1e-12, format!("max abs error {worst:.2e} over {cases} samples"))
}

fn macro_f1() -> Line {
    let mut worst = 0.0f64;
    for i in 0..2000u64 {
        let mut rng = child_rng(23, &[i]);
        let n = rng.gen_range(1..40);
        let golds: Vec<StanceLabel> = (0..n).map(|_| LABELS[rng.gen_range(0..3)]).collect();
        let preds: Vec<StanceLabel> = (0..n).map(|_| LABELS[rng.gen_range(0..3)]).collect();
        let mut cm = [[0usize; 3]; 3];
        for (g, p) in golds.iter().zip(&preds) {
            cm[g.index()][p.index()] += 1;
        }
        let mut f1s = [0.0; 3];
        for c in 0..3 {
            let tp = cm[c][c] as f64;
            let predicted: usize = (0..3).map(|g| cm[g][c]).sum();
            let actual: usize = cm[c].iter().sum();
            let prec = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let rec = if actual == 0 { 0.0 } else { tp / actual as f64 };
            f1s[c] = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        }
        let want = f1s.iter().sum::<f64>() / 3.0;
        worst = worst.max((eval::macro_f1(&preds, &golds).unwrap().macro_f1 - want).abs());
    }
    use StanceLabel::*;
    let hand = eval::macro_f1(&[Favor, Favor, Favor], &[Favor, Against, Neutral]).unwrap().macro_f1;
    line(
        "macro-F1",
        worst <= 1e-12 && (hand - 1.0 / 6.0).abs() <= 1e-12,
        format!("max abs error {worst:.2e} on 2000 vectors; hand case {hand:.4}"),
    )
}

struct SynthRun {
    probe1: Vec<f64>,
    probe2: Vec<f64>,
    ce_f1: f64,
    f1: f64,
}

/// Dimensions and step size used for the synthetic suite.
fn synth_train_config(seed: u64, strategy: NegativeStrategy) -> TrainConfig {
    TrainConfig {
        seed,
        strategy,
        embedding_dim: 16,
        hidden_dim: 16,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

fn synth_run(seed: u64, strategy: NegativeStrategy) -> SynthRun {
    let data = synthlab::generate_synth(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let v = textproc::build_vocab(&data.train, 1).unwrap();
    let al = AliasMap::default();
    let tok = |d| TokenizedDataset::new(d, &v, &al).unwrap();
    let (tr, dv, te, pre) = (tok(&data.train), tok(&data.dev), tok(&data.test), tok(&data.pretrain));
    let fm = maskfill::ngram_fill_model(&data.train, &v).unwrap();
    let cfg = synth_train_config(seed, strategy);
    let out = train::run_rccl(&tr, &dv, Some(&pre), v.len(), &fm, &cfg).unwrap();
    let probe = |f| eval::bias_probe(f, &data.oracle.targets, &v).unwrap().rows.iter().map(|r| r.tv).collect();
    SynthRun {
        probe1: probe(out.stage1.params()),
        probe2: probe(out.stage2.params()),
        ce_f1: eval::evaluate(out.stage1.params(), &te).unwrap().overall.macro_f1,
        f1: eval::evaluate(out.stage2.params(), &te).unwrap().overall.macro_f1,
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_suite() -> Vec<Line> {
    // the default synthetic config biases target 0 only
    let rssg: Vec<SynthRun> = (0..5).map(|s| synth_run(s, NegativeStrategy::Rssg)).collect();
    let aug: Vec<SynthRun> = (0..5).map(|s| synth_run(s, NegativeStrategy::AugOnly)).collect();
    let biased1 = mean(rssg.iter().map(|r| r.probe1[0]));
    let unbiased1 = mean(rssg.iter().map(|r| mean(r.probe1[1..].iter().copied())));
    let biased2 = mean(rssg.iter().map(|r| r.probe2[0]));
    let ce = mean(rssg.iter().map(|r| r.ce_f1));
    let rc = mean(rssg.iter().map(|r| r.f1));
    let ao = mean(aug.iter().map(|r| r.f1));
    vec![
        line(
            "synthetic debiasing (a)",
            biased1 > unbiased1,
            format!("stage-1 TV biased {biased1:.4} vs unbiased {unbiased1:.4}"),
        ),
        line(
            "synthetic debiasing (b)",
            biased1 - biased2 > 0.0,
            format!("biased-target TV stage 1 {biased1:.4} -> stage 2 {biased2:.4}"),
        ),
        line(
            "synthetic debiasing (c)",
            rc >= ce - 0.02,
            format!("test macro-F1 RCCL {rc:.4} vs CE-only {ce:.4}"),
        ),
        line("ablation ordering", rc >= ao, format!("5-seed macro-F1 rssg {rc:.4} vs aug-only {ao:.4}")),
    ]
}

fn determinism() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |out: PathBuf| RunConfig {
        synth: Some(SynthConfig { seed: 3, ..SynthConfig::default() }),
        train: synth_train_config(3, NegativeStrategy::Rssg),
        output: out,
        ..RunConfig::default()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    dispatch(&Command::Rccl, cfg(a.clone())).unwrap();
    dispatch(&Command::Rccl, cfg(b.clone())).unwrap();
    let files = ["model.json", "vocab.json", "counterfactuals.jsonl", "report.json", "report.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    line(
        "determinism",
        differing.is_empty(),
        if differing.is_empty() { "two rccl runs byte-identical".into() } else { format!("differ: {differing:?}") },
    )
}

fn loader_counts() -> Vec<Line> {
    let skip = |name: &str, var: &str| Line {
        name: name.into(),
        status: Status::Skip,
        detail: format!("set {var} to the official file"),
    };
    let mut out = Vec::new();
    match std::env::var("RCCL_SEMEVAL_TRAIN") {
        Ok(path) => {
            let d = corpus::load_semeval(&path, Split::Train).unwrap();
            let c = d.label_counts();
            out.push(line("semeval train counts", d.len() == 2914 && c == [753, 1395, 766], format!("{} samples, {c:?}", d.len())));
        }
        Err(_) => out.push(skip("semeval train counts", "RCCL_SEMEVAL_TRAIN")),
    }
    match std::env::var("RCCL_VAST_TRAIN") {
        Ok(path) => {
            let d = corpus::load_vast(&path, Split::Train).unwrap();
            out.push(line("vast train counts", d.len() == 13477, format!("{} samples", d.len())));
        }
        Err(_) => out.push(skip("vast train counts", "RCCL_VAST_TRAIN")),
    }
    match std::env::var("RCCL_VAST_TEST") {
        Ok(path) => {
            let d = corpus::load_vast(&path, Split::Test).unwrap();
            let (zero, few) = corpus::shot_target_counts(&d);
            out.push(line("vast test shot targets", (zero, few) == (600, 159), format!("zero {zero}, few {few}")));
        }
        Err(_) => out.push(skip("vast test shot targets", "RCCL_VAST_TEST")),
    }
    out
}

fn main() {
    // `cargo test` passes harness flags; only a name filter is honoured
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let strict = std::env::var("RCCL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let suites: Vec<(&str, fn() -> Vec<Line>)> = vec![
        ("gradient", || vec![gradient_check()]),
        ("loss", || vec![loss_oracles()]),
        ("masking", || vec![masking_safety()]),
        ("relabel", || vec![relabel_partition()]),
        ("interventional", || vec![interventional()]),
        ("macro", || vec![macro_f1()]),
        ("synthetic", synthetic_suite),
        ("determinism", || vec![determinism()]),
        ("loader", loader_counts),
    ];
    let mut unexpected = Vec::new();
    let (mut pass, mut fail, mut skip) = (0, 0, 0);
    for (key, run) in suites {
        if filter.as_deref().is_some_and(|f| !key.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let lines = run();
        let secs = start.elapsed().as_secs_f64();
        for l in lines {
            let tag = match l.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            match l.status {
                Status::Pass => pass += 1,
                Status::Skip => skip += 1,
                Status::Fail => {
                    fail += 1;
                    if strict || !KNOWN_RED.contains(&l.name.as_str()) {
                        unexpected.push(l.name.clone());
                    }
                }
            }
            let known = if l.status == Status::Fail && KNOWN_RED.contains(&l.name.as_str()) { " [known red]" } else { "" };
            println!("{tag} {}: {} ({secs:.1}s){known}", l.name, l.detail);
        }
    }
    println!("acceptance: {pass} passed, {fail} failed, {skip} skipped");
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

