//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diarlm_core::adjudicator::LlmLabelResult;
use diarlm_core::backends::mock::{fixtures, MockBackends, MockScript, OracleLlm};
use diarlm_core::metrics::{der, relative_reduction, Annotation, DerReport};
use diarlm_core::model::{word_in_segment, DiarSegment, Embedding, SegmentOrigin};
use diarlm_core::pipeline::{
    final_annotation, label_annotation, run_baseline, run_pipeline, Backends, PipelineConfig,
    PipelineOutput, SweepItem, sweep_chunks,
};
use diarlm_core::reconcile::{align, levenshtein_similarity};
use diarlm_core::refine::{clean_duplicates, decide, AdjudicationRecord, FinalSegment, Provenance};
use diarlm_core::reverify::SimilarityIndex;
use diarlm_core::{Identity, IdentityMap, SpeakerLabel, TimeInterval, Word};

type Outcome = Result<String, String>;

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

// ---------------------------------------------------------------- decisions

fn decision_table() -> Outcome {
    use Provenance::*;
    let started = Instant::now();
    let map: IdentityMap = [("A", "P"), ("B", "Q"), ("C", "S")]
        .into_iter()
        .map(|(l, i)| (SpeakerLabel::new(l), Identity::new(i).unwrap()))
        .collect();
    // (original, reverified, llm label and confidence) -> (identity, provenance)
    let table: &[(&str, &str, Option<(&str, f64)>, &str, Provenance)] = &[
        ("Unknown", "Unknown", None, "Unknown", UnknownRetained),
        ("Unknown", "Unknown", Some(("A", 0.95)), "P", LlmAssigned),
        ("Unknown", "Unknown", Some(("B", 0.95)), "Q", LlmAssigned),
        ("Unknown", "Unknown", Some(("C", 0.95)), "S", LlmAssigned),
        ("Unknown", "Unknown", Some(("Unknown", 0.95)), "Unknown", UnknownRetained),
        ("Unknown", "Unknown", Some(("B", 0.5)), "Unknown", UnknownRetained),
        ("Unknown", "Unknown", Some(("A", 0.9)), "P", LlmAssigned),
        ("Unknown", "Unknown", Some(("A", 0.89)), "Unknown", UnknownRetained),
        ("Unknown", "B", None, "Unknown", UnknownRetained),
        ("Unknown", "B", Some(("A", 0.95)), "P", LlmAssigned),
        ("Unknown", "B", Some(("B", 0.95)), "Q", LlmAssigned),
        ("Unknown", "B", Some(("C", 0.95)), "S", LlmAssigned),
        ("Unknown", "B", Some(("Unknown", 0.95)), "Unknown", UnknownRetained),
        ("Unknown", "B", Some(("B", 0.5)), "Unknown", UnknownRetained),
        ("A", "A", None, "P", OriginalAgreed),
        ("A", "A", Some(("A", 0.95)), "P", OriginalAgreed),
        ("A", "A", Some(("B", 0.95)), "P", OriginalAgreed),
        ("A", "A", Some(("C", 0.95)), "P", OriginalAgreed),
        ("A", "A", Some(("Unknown", 0.95)), "P", OriginalAgreed),
        ("A", "A", Some(("B", 0.5)), "P", OriginalAgreed),
        ("A", "B", None, "P", OriginalAgreed),
        ("A", "B", Some(("A", 0.95)), "P", MajorityVote),
        ("A", "B", Some(("B", 0.95)), "Q", MajorityVote),
        ("A", "B", Some(("C", 0.95)), "P", MajorityVote),
        ("A", "B", Some(("Unknown", 0.95)), "P", MajorityVote),
        ("A", "B", Some(("B", 0.5)), "P", OriginalAgreed),
        ("A", "B", Some(("B", 0.9)), "Q", MajorityVote),
        ("A", "B", Some(("B", 0.89)), "P", OriginalAgreed),
    ];
    let mut mismatches = Vec::new();
    for &(orig, rev, llm, want_id, want_prov) in table {
        let rec = AdjudicationRecord {
            segment_id: 0,
            original: SpeakerLabel::new(orig),
            reverified: SpeakerLabel::new(rev),
            llm: llm.map(|(l, c)| LlmLabelResult {
                segment_id: 0,
                llm_label: SpeakerLabel::new(l),
                confidence: c,
                raw_response: String::new(),
            }),
        };
        match decide(&rec, &map, 0.9) {
            Ok((id, prov)) if id.as_str() == want_id && prov == want_prov => {}
            got => mismatches.push(format!("{orig}/{rev}/{llm:?} -> {got:?}")),
        }
    }
    let took = within(Duration::from_secs(1), started)?;
    if mismatches.is_empty() {
        Ok(format!("{} cells, 0 mismatches, {took:?}", table.len()))
    } else {
        Err(format!("{} mismatches: {:?}", mismatches.len(), mismatches))
    }
}

// ---------------------------------------------------------------- DER

/// Segments on a 10 ms grid, times in centiseconds.
type GridAnn = Vec<(u32, u32, String)>;

const HORIZON: u32 = 6000;

fn random_grid(rng: &mut ChaCha8Rng, prefix: &str) -> GridAnn {
    let speakers = rng.random_range(1..=5);
    let mut out = Vec::new();
    for s in 0..speakers {
        for _ in 0..rng.random_range(0..=4) {
            let a = rng.random_range(0..HORIZON);
            let b = (a + rng.random_range(1..=1500)).min(HORIZON);
            out.push((a, b, format!("{prefix}{s}")));
        }
    }
    if out.is_empty() {
        let a = rng.random_range(0..HORIZON - 1);
        out.push((a, HORIZON, format!("{prefix}0")));
    }
    out
}

fn perturbed(rng: &mut ChaCha8Rng, reference: &GridAnn) -> GridAnn {
    let names: BTreeSet<&String> = reference.iter().map(|s| &s.2).collect();
    let mut relabel: Vec<usize> = (0..names.len()).collect();
    relabel.shuffle(rng);
    let rename: BTreeMap<&String, String> = names
        .iter()
        .zip(&relabel)
        .map(|(n, k)| (*n, format!("h{k}")))
        .collect();
    let mut out = Vec::new();
    for (a, b, l) in reference {
        if rng.random_bool(0.1) {
            continue;
        }
        let a = (*a as i64 + rng.random_range(-60..=60)).clamp(0, HORIZON as i64 - 1) as u32;
        let b = (*b as i64 + rng.random_range(-60..=60)).clamp(a as i64 + 1, HORIZON as i64) as u32;
        let label = if rng.random_bool(0.15) {
            format!("h{}", rng.random_range(0..6))
        } else {
            rename[l].clone()
        };
        out.push((a, b, label));
    }
    if rng.random_bool(0.3) {
        let a = rng.random_range(0..HORIZON - 1);
        out.push((a, (a + 300).min(HORIZON), "h9".into()));
    }
    out
}

fn to_annotation(g: &GridAnn) -> Annotation {
    g.iter()
        .map(|(a, b, l)| {
            (
                TimeInterval::new(*a as f64 / 100.0, *b as f64 / 100.0).unwrap(),
                l.clone(),
            )
        })
        .collect()
}

fn best_overlap(co: &[Vec<u64>], row: usize, used: &mut [bool]) -> u64 {
    if row == co.len() {
        return 0;
    }
    let mut best = best_overlap(co, row + 1, used);
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.max(co[row][c] + best_overlap(co, row + 1, used));
            used[c] = false;
        }
    }
    best
}

/// Frame-counting DER: (missed, false alarm, confusion, total) in frames.
fn frame_oracle(reference: &GridAnn, hypothesis: &GridAnn, collar_frames: u32) -> Option<[f64; 4]> {
    let labels = |g: &GridAnn| -> Vec<String> {
        g.iter().map(|s| s.2.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    };
    let (rl, hl) = (labels(reference), labels(hypothesis));
    let frames = HORIZON as usize + 1;
    let mut scored = vec![true; frames];
    if collar_frames > 0 {
        for (a, b, _) in reference {
            for bd in [*a, *b] {
                let lo = bd.saturating_sub(collar_frames) as usize;
                let hi = ((bd + collar_frames) as usize).min(frames);
                for f in scored.iter_mut().take(hi).skip(lo) {
                    *f = false;
                }
            }
        }
    }
    let active = |g: &GridAnn, names: &[String], f: u32| -> Vec<usize> {
        names
            .iter()
            .enumerate()
            .filter(|(_, n)| g.iter().any(|(a, b, l)| l == *n && *a <= f && f < *b))
            .map(|(i, _)| i)
            .collect()
    };
    let per_frame: Vec<(Vec<usize>, Vec<usize>)> = (0..HORIZON)
        .filter(|&f| scored[f as usize])
        .map(|f| (active(reference, &rl, f), active(hypothesis, &hl, f)))
        .collect();
    let mut co = vec![vec![0u64; rl.len()]; hl.len()];
    let (mut total, mut miss, mut fa, mut overlap_pairs) = (0u64, 0u64, 0u64, 0u64);
    for (r, h) in &per_frame {
        for &x in h {
            for &y in r {
                co[x][y] += 1;
            }
        }
        total += r.len() as u64;
        miss += r.len().saturating_sub(h.len()) as u64;
        fa += h.len().saturating_sub(r.len()) as u64;
        overlap_pairs += r.len().min(h.len()) as u64;
    }
    if total == 0 {
        return None;
    }
    let correct = best_overlap(&co, 0, &mut vec![false; rl.len()]);
    Some([miss as f64, fa as f64, (overlap_pairs - correct) as f64, total as f64])
}

fn der_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0de7);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let reference = random_grid(&mut rng, "r");
        let hypothesis = if case % 2 == 0 {
            perturbed(&mut rng, &reference)
        } else {
            random_grid(&mut rng, "h")
        };
        let collar = if rng.random_bool(0.5) { 0.25 } else { 0.0 };
        let oracle = frame_oracle(&reference, &hypothesis, (collar * 100.0) as u32);
        let got = der(&to_annotation(&reference), &to_annotation(&hypothesis), collar);
        match (oracle, got) {
            (None, Err(_)) => {}
            (Some([m, f, c, t]), Ok(rep)) => {
                let want = [(m + f + c) / t, f / t, c / t, m / t];
                let have = [rep.der, rep.false_alarm, rep.confusion, rep.missed];
                for (w, h) in want.iter().zip(have) {
                    worst = worst.max((w - h).abs());
                }
                if worst > 1e-6 {
                    return Err(format!("case {case}: oracle {want:?}, sweep {have:?}"));
                }
            }
            (o, g) => return Err(format!("case {case}: oracle {o:?}, sweep {g:?}")),
        }
    }
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!("1000 cases, max deviation {worst:.2e}, {took:?}"))
}

fn der_rename_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
    for case in 0..100 {
        let reference = random_grid(&mut rng, "r");
        let hypothesis = perturbed(&mut rng, &reference);
        let collar = if case % 2 == 0 { 0.25 } else { 0.0 };
        let names: Vec<String> = hypothesis
            .iter()
            .map(|s| s.2.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut fresh: Vec<String> = (0..names.len())
            .map(|_| format!("z{:08x}", rng.random::<u32>()))
            .collect();
        fresh.shuffle(&mut rng);
        let bij: BTreeMap<String, String> = names.into_iter().zip(fresh).collect();
        let renamed: GridAnn = hypothesis
            .iter()
            .map(|(a, b, l)| (*a, *b, bij[l].clone()))
            .collect();
        let r = to_annotation(&reference);
        let (x, y) = (der(&r, &to_annotation(&hypothesis), collar), der(&r, &to_annotation(&renamed), collar));
        let (x, y): (DerReport, DerReport) = match (x, y) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(a), Err(b)) if a == b => continue,
            other => return Err(format!("case {case}: {other:?}")),
        };
        let same_numbers = x.der == y.der
            && x.false_alarm == y.false_alarm
            && x.confusion == y.confusion
            && x.missed == y.missed
            && x.total_reference == y.total_reference;
        let translated: BTreeMap<String, String> = x
            .mapping
            .iter()
            .map(|(h, r)| (bij[h].clone(), r.clone()))
            .collect();
        if !same_numbers || translated != y.mapping {
            return Err(format!("case {case}: {x:?} vs {y:?}"));
        }
    }
    Ok("100 cases, all components identical".into())
}

// ---------------------------------------------------------------- tables

/// (row, DER, FA, Conf., Miss) in hundredths of a percent.
const ROWS: &[(&str, u32, u32, u32, u32)] = &[
    ("clinical SD Sortformer", 2106, 421, 786, 899),
    ("clinical SD Pyannote", 2272, 602, 923, 747),
    ("clinical SD+ASR Sortformer", 2305, 625, 960, 720),
    ("clinical proposed Qwen", 1772, 416, 428, 928),
    ("clinical proposed GPT", 1619, 412, 284, 923),
    ("clinical AWS", 2929, 844, 1134, 950),
    ("ablation SD Sortformer", 2106, 421, 786, 899),
    ("ablation re-verification", 2151, 421, 830, 899),
    ("ablation re-run ASR", 2163, 454, 824, 884),
    ("ablation GPT-full", 2175, 450, 847, 877),
    ("ablation GPT-ref.", 2129, 435, 793, 901),
    ("ablation GPT-identity", 1661, 459, 332, 870),
    ("ablation GPT-ref.+identity", 1642, 435, 306, 901),
    ("ablation proposed GPT", 1619, 412, 284, 923),
    ("meeting SD Sortformer", 2692, 298, 451, 1943),
    ("meeting SD+ASR Sortformer", 2859, 466, 630, 1763),
    ("meeting proposed Qwen Sortformer", 2952, 176, 842, 1934),
    ("meeting proposed GPT Sortformer", 2534, 192, 457, 1885),
    ("meeting SD Pyannote", 1823, 256, 621, 946),
    ("meeting SD+ASR Pyannote", 1889, 323, 648, 919),
    ("meeting proposed Qwen Pyannote", 2312, 236, 986, 1090),
    ("meeting proposed GPT Pyannote", 1842, 246, 574, 1022),
];

/// Single-speaker reference of 100 s; the hypothesis misses `miss` s,
/// confuses `conf` s and adds `fa` s of speech.
fn synthetic_row(fa: f64, conf: f64, miss: f64) -> DerReport {
    let iv = |a: f64, b: f64| TimeInterval::new(a, b).unwrap();
    let reference: Annotation = [(iv(0.0, 100.0), "X".to_string())].into_iter().collect();
    let mut hyp = Annotation::new();
    hyp.push(iv(0.0, 100.0 - miss - conf), "A");
    hyp.push(iv(100.0 - miss - conf, 100.0 - miss), "B");
    hyp.push(iv(100.0, 100.0 + fa), "A");
    der(&reference, &hyp, 0.0).expect("reference has speech")
}

fn table_arithmetic() -> Outcome {
    let mut worst = 0i64;
    for &(name, d, fa, conf, miss) in ROWS {
        // each printed value is rounded to 0.01, so four roundings leave the
        // sum off by less than 0.02, i.e. at most one unit in the last place
        let gap = (fa + conf + miss) as i64 - d as i64;
        worst = worst.max(gap.abs());
        if gap.abs() > 1 {
            return Err(format!("{name}: components sum off by {gap} hundredths"));
        }
        let (f, c, m) = (fa as f64 / 100.0, conf as f64 / 100.0, miss as f64 / 100.0);
        let rep = synthetic_row(f, c, m);
        let expect = [(f + c + m) / 100.0, f / 100.0, c / 100.0, m / 100.0];
        let got = [rep.der, rep.false_alarm, rep.confusion, rep.missed];
        if expect.iter().zip(got).any(|(e, g)| (e - g).abs() > 1e-9) {
            return Err(format!("{name}: scorer gives {got:?}, expected {expect:?}"));
        }
    }
    let red = relative_reduction(0.2305, 0.1619).map_err(|e| e.to_string())? * 100.0;
    if (red - 29.7).abs() > 0.1 {
        return Err(format!("relative reduction {red:.3} %"));
    }
    Ok(format!(
        "{} rows, max rounding gap {worst} hundredth(s); reduction {red:.2} %",
        ROWS.len()
    ))
}

// ---------------------------------------------------------------- Levenshtein

/// Every string over {a,b,c} up to `max_len`, in depth-first order.
fn all_strings(max_len: usize) -> Vec<String> {
    fn go(prefix: &mut String, max_len: usize, out: &mut Vec<String>) {
        out.push(prefix.clone());
        if prefix.len() == max_len {
            return;
        }
        for c in ['a', 'b', 'c'] {
            prefix.push(c);
            go(prefix, max_len, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut String::new(), max_len, &mut out);
    out
}

/// Distances from `a` to every string of [`all_strings`], same order.
/// Recurses over the second string one character at a time, extending the
/// row of distances from each prefix of `a`.
fn oracle_distances(a: &[u8], row: &[usize], depth: usize, max_len: usize, out: &mut Vec<usize>) {
    out.push(row[a.len()]);
    if depth == max_len {
        return;
    }
    for c in *b"abc" {
        let mut next = vec![row[0] + 1; a.len() + 1];
        for i in 1..=a.len() {
            let keep = row[i - 1] + usize::from(a[i - 1] != c);
            next[i] = keep.min(row[i] + 1).min(next[i - 1] + 1);
        }
        oracle_distances(a, &next, depth + 1, max_len, out);
    }
}

fn levenshtein_oracle() -> Outcome {
    let started = Instant::now();
    let strings = all_strings(8);
    let mut pairs = 0u64;
    let mut dists = Vec::with_capacity(strings.len());
    for a in &strings {
        let base: Vec<usize> = (0..=a.len()).collect();
        dists.clear();
        oracle_distances(a.as_bytes(), &base, 0, 8, &mut dists);
        for (b, &d) in strings.iter().zip(&dists) {
            let longest = a.len().max(b.len());
            let want = if longest == 0 {
                1.0
            } else {
                1.0 - d as f64 / longest as f64
            };
            let got = levenshtein_similarity(a, b);
            if got != want {
                return Err(format!("{a:?} vs {b:?}: got {got}, oracle {want}"));
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs exact, {:?}", started.elapsed()))
}

// ---------------------------------------------------------------- k-NN

fn knn_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let normal = rand_distr::Normal::new(0.0f32, 1.0).unwrap();
    let mut queries = 0usize;
    for set in 0..500 {
        let n = rng.random_range(1..=200);
        let protos: Vec<Vec<f32>> = (0..rng.random_range(1..=6))
            .map(|_| (0..192).map(|_| rng.sample(normal)).collect())
            .collect();
        let raw: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                let p = &protos[rng.random_range(0..protos.len())];
                p.iter().map(|x| x + 0.6 * rng.sample(normal)).collect()
            })
            .collect();
        let embs: Vec<Embedding> = raw.iter().map(|v| Embedding::new(v.clone()).unwrap()).collect();
        let index = SimilarityIndex::build(&embs).map_err(|e| e.to_string())?;
        let unit: Vec<Vec<f64>> = raw
            .iter()
            .map(|v| {
                let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                v.iter().map(|x| *x as f64 / norm).collect()
            })
            .collect();
        let excluded: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.1)).collect();
        let k = rng.random_range(1..=20);
        for q in 0..n {
            let mut brute: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != q && !excluded.contains(&j))
                .map(|j| (unit[q].iter().zip(&unit[j]).map(|(a, b)| a * b).sum(), j))
                .collect();
            brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            brute.truncate(k);
            let want: Vec<usize> = brute.into_iter().map(|(_, j)| j).collect();
            let got: Vec<usize> = index
                .search(q, k, |j| !excluded.contains(&j))
                .into_iter()
                .map(|nb| nb.id)
                .collect();
            if got != want {
                return Err(format!("set {set}, query {q}: {got:?} vs brute {want:?}"));
            }
            queries += 1;
        }
    }
    Ok(format!("500 sets, {queries} queries exact"))
}

// ---------------------------------------------------------------- end to end

fn reference_of(script: &MockScript) -> Annotation {
    script.reference_turns().into_iter().collect()
}

fn run_mock(script: &MockScript) -> Result<(Vec<FinalSegment>, IdentityMap, Vec<DiarSegment>), String> {
    let mock = MockBackends::new(script.clone());
    let llm = OracleLlm::new(script.clone());
    let backends = Backends {
        diarizer: &mock,
        transcriber: &mock,
        embedder: &mock,
        llm: &llm,
    };
    let config = PipelineConfig::default();
    let audio = script.audio();
    let (segs, map, _) = run_pipeline(&audio, &backends, &config, None).map_err(|e| e.to_string())?;
    let baseline = run_baseline(&audio, &backends, &config).map_err(|e| e.to_string())?;
    Ok((segs, map, baseline))
}

fn final_identities(segs: &[FinalSegment]) -> Vec<String> {
    segs.iter()
        .filter(|s| !s.identity.is_unknown())
        .map(|s| s.identity.as_str().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn scenario_clean() -> Outcome {
    let started = Instant::now();
    let script = fixtures::clean_three_speakers(11);
    let (segs, _, _) = run_mock(&script)?;
    let rep = der(&reference_of(&script), &final_annotation(&segs), 0.25).map_err(|e| e.to_string())?;
    let ids = final_identities(&segs);
    let took = within(Duration::from_secs(10), started)?;
    if rep.der != 0.0 {
        return Err(format!("DER {}", rep.der));
    }
    if ids != script.identities() {
        return Err(format!("identities {ids:?}, scripted {:?}", script.identities()));
    }
    Ok(format!("DER 0, identities {ids:?}, {took:?}"))
}

fn scenario_split() -> Outcome {
    let started = Instant::now();
    let script = fixtures::split_speaker(11);
    let (segs, _, baseline) = run_mock(&script)?;
    let reference = reference_of(&script);
    let ours = der(&reference, &final_annotation(&segs), 0.25).map_err(|e| e.to_string())?;
    let base = der(&reference, &label_annotation(&baseline), 0.25).map_err(|e| e.to_string())?;
    let ids = final_identities(&segs);
    let took = within(Duration::from_secs(10), started)?;
    if ours.confusion >= base.confusion {
        return Err(format!(
            "confusion {:.4} not below baseline {:.4}",
            ours.confusion, base.confusion
        ));
    }
    if ids.len() != script.identities().len() {
        return Err(format!("{} identities, scripted {}", ids.len(), script.identities().len()));
    }
    Ok(format!(
        "confusion {:.2} % vs baseline {:.2} %, {} identities, {took:?}",
        ours.confusion * 100.0,
        base.confusion * 100.0,
        ids.len()
    ))
}

fn chunk_sweep() -> Outcome {
    let script = fixtures::long_drift(11);
    let mock = MockBackends::new(script.clone());
    let items = [SweepItem {
        audio: script.audio(),
        reference: reference_of(&script),
        diarizer: &mock,
        embedder: &mock,
    }];
    let rows = sweep_chunks(&items, &[90.0, 250.0], &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let (short, long) = (rows[0].der, rows[1].der);
    if long <= short {
        Ok(format!("DER {:.2} % at 250 s, {:.2} % at 90 s", long * 100.0, short * 100.0))
    } else {
        Err(format!("DER {:.4} at 250 s exceeds {:.4} at 90 s", long, short))
    }
}

// ---------------------------------------------------------------- properties

const VOCAB: &[&str] = &["yes", "no", "I", "did", "well", "maybe", "knee", "okay"];

fn random_final(rng: &mut ChaCha8Rng) -> Vec<FinalSegment> {
    let base: Vec<&str> = (0..24).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
    let n = rng.random_range(0..=10);
    let mut out: Vec<FinalSegment> = (0..n)
        .map(|_| {
            let a = rng.random_range(0.0..20.0f64);
            let b = a + rng.random_range(0.1..6.0);
            let from = rng.random_range(0..base.len());
            let to = (from + rng.random_range(0..=6)).min(base.len());
            let texts = &base[from..to];
            let step = (b - a) / texts.len().max(1) as f64;
            let identity = ["Patient", "Clinician"][rng.random_range(0..2)];
            FinalSegment {
                interval: TimeInterval::new(a, b).unwrap(),
                identity: Identity::new(identity).unwrap(),
                words: texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| Word::new(*t, a + step * i as f64, a + step * (i as f64 + 0.9)).unwrap())
                    .collect(),
                provenance: Provenance::OriginalAgreed,
                segment_ids: vec![0],
            }
        })
        .collect();
    if rng.random_bool(0.3) && !out.is_empty() {
        let twin = out[0].clone();
        out.push(twin);
    }
    out.sort_by(|x, y| x.start().total_cmp(&y.start()));
    out
}

fn random_alignment_case(rng: &mut ChaCha8Rng) -> (Vec<DiarSegment>, Vec<Word>) {
    let sd: Vec<DiarSegment> = (0..rng.random_range(0..=8))
        .map(|_| {
            let a = (rng.random_range(0.0..30.0f64) * 10.0).round() / 10.0;
            let b = a + (rng.random_range(0.1..8.0f64) * 10.0).round() / 10.0;
            let label = ["spk0", "spk1", "spk2"][rng.random_range(0..3)];
            DiarSegment::new(TimeInterval::new(a, b).unwrap(), label)
        })
        .collect();
    let mut words: Vec<Word> = (0..rng.random_range(0..=40))
        .map(|i| {
            let a = (rng.random_range(0.0..30.0f64) * 10.0).round() / 10.0;
            Word::new(format!("w{i}"), a, a + rng.random_range(0.1..0.5)).unwrap()
        })
        .collect();
    words.sort_by(|x, y| x.start().total_cmp(&y.start()));
    (sd, words)
}

fn partition_violation(sd: &[DiarSegment], words: &[Word]) -> Option<String> {
    let out = align(sd, words, 1.0);
    let mut seen: Vec<&Word> = out.segments.iter().flat_map(|s| &s.words).collect();
    if seen.len() != words.len() {
        return Some(format!("{} words in, {} out", words.len(), seen.len()));
    }
    seen.sort_by(|a, b| a.text.cmp(&b.text));
    let mut input: Vec<&Word> = words.iter().collect();
    input.sort_by(|a, b| a.text.cmp(&b.text));
    if seen != input {
        return Some("word multiset changed".into());
    }
    for s in &out.segments {
        for w in &s.words {
            let owners: Vec<&DiarSegment> = sd.iter().filter(|d| word_in_segment(w, d)).collect();
            match s.origin {
                SegmentOrigin::OrphanWords => {
                    if !owners.is_empty() {
                        return Some(format!("{} orphaned but covered", w.text));
                    }
                }
                _ => {
                    if !word_in_segment(w, s) {
                        return Some(format!("{} outside its segment", w.text));
                    }
                    let latest = owners.iter().map(|d| d.start()).fold(f64::NEG_INFINITY, f64::max);
                    if s.start() != latest {
                        return Some(format!("{} not in the latest-starting segment", w.text));
                    }
                }
            }
        }
    }
    None
}

fn idempotence_and_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1de4);
    let mut violations = Vec::new();
    let mut removed = 0usize;
    for case in 0..1000 {
        let segs = random_final(&mut rng);
        let once = clean_duplicates(&segs);
        removed += segs.len() - once.len();
        if clean_duplicates(&once) != once {
            violations.push(format!("dedup case {case} not idempotent"));
        }
        let (sd, words) = random_alignment_case(&mut rng);
        if let Some(v) = partition_violation(&sd, &words) {
            violations.push(format!("align case {case}: {v}"));
        }
    }
    if violations.is_empty() {
        Ok(format!("1000 + 1000 fixtures, 0 violations ({removed} duplicates removed)"))
    } else {
        Err(format!("{} violations: {:?}", violations.len(), &violations[..violations.len().min(5)]))
    }
}

fn determinism() -> Outcome {
    let render = || -> Result<(String, String), String> {
        let script = fixtures::split_speaker(23);
        let (segs, map, _) = run_mock(&script)?;
        let out = PipelineOutput::new(script.recording.clone(), &segs, &map, &PipelineConfig::default());
        Ok((out.to_json(), out.to_rttm()))
    };
    let first = render()?;
    let second = render()?;
    if first == second {
        Ok(format!("{} JSON bytes identical", first.0.len()))
    } else {
        Err("outputs differ between runs".into())
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("refinement decision table", decision_table),
        ("DER matches frame oracle", der_oracle_equivalence),
        ("DER invariant to hypothesis renaming", der_rename_invariance),
        ("reported table arithmetic", table_arithmetic),
        ("Levenshtein matches exhaustive oracle", levenshtein_oracle),
        ("k-NN equals brute-force search", knn_exactness),
        ("clean three-speaker scenario", scenario_clean),
        ("split-speaker scenario", scenario_split),
        ("chunk length sweep", chunk_sweep),
        ("dedup idempotence and word partition", idempotence_and_partition),
        ("deterministic output", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
