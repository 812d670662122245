use diarlm_core::backends::mock::{MockBackends, MockScript};
use diarlm_core::backends::SpeakerEmbedder;
use diarlm_core::model::{DiarSegment, Embedding, SpeakerLabel, TimeInterval};
use diarlm_core::reverify::{reverify_all, reverify_segment, SimilarityIndex};

fn brute_top_k(embs: &[Embedding], query: usize, k: usize) -> Vec<usize> {
    let unit = |e: &Embedding| -> Vec<f64> {
        let n = e.as_slice().iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        e.as_slice().iter().map(|x| *x as f64 / n).collect()
    };
    let q = unit(&embs[query]);
    let mut all: Vec<(f64, usize)> = (0..embs.len())
        .filter(|&j| j != query)
        .map(|j| (q.iter().zip(unit(&embs[j])).map(|(a, b)| a * b).sum(), j))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

/// A segment the diarizer called A whose voice is really B's: its nearest
/// neighbors are the seven B segments, then the three other A segments.
#[test]
fn mislabeled_segment_is_flagged() {
    let mut turns = Vec::new();
    for i in 0..7 {
        turns.push(format!(r#"{{"speaker":"B","identity":"b","start":{},"end":{}}}"#, i * 10, i * 10 + 5));
    }
    for i in 7..10 {
        turns.push(format!(r#"{{"speaker":"A","identity":"a","start":{},"end":{}}}"#, i * 10, i * 10 + 5));
    }
    turns.push(r#"{"speaker":"B","identity":"b","start":100,"end":105}"#.to_string());
    let script = MockScript::from_json(&format!(r#"{{"seed":9,"turns":[{}]}}"#, turns.join(","))).unwrap();
    let mock = MockBackends::new(script.clone());
    let audio = script.audio();
    let embs: Vec<Embedding> = script
        .turns
        .iter()
        .map(|t| mock.embed(&audio, TimeInterval::new(t.start, t.end).unwrap()).unwrap())
        .collect();
    let mut labels: Vec<SpeakerLabel> = script.turns.iter().map(|t| SpeakerLabel::new(t.speaker.as_str())).collect();
    labels[10] = SpeakerLabel::new("A");

    let index = SimilarityIndex::build(&embs).unwrap();
    let res = reverify_segment(&index, &labels, 10, 10);
    let got: Vec<usize> = index.search(10, 10, |_| true).iter().map(|n| n.id).collect();
    assert_eq!(got, brute_top_k(&embs, 10, 10));
    let b_count = res.neighbor_labels.iter().filter(|l| l.as_str() == "B").count();
    assert_eq!((b_count, res.neighbor_labels.len()), (7, 10));
    assert_eq!(res.reverified.as_str(), "B");
    assert!(res.low_confidence);

    let all = reverify_all(&labels, &embs.iter().cloned().map(Some).collect::<Vec<_>>(), 10).unwrap();
    // every B-voiced segment keeps its label; with k covering the whole
    // recording the three true A segments are outvoted as well
    for r in &all[..7] {
        assert!(!r.low_confidence);
    }
    assert!(all[10].low_confidence);
}

#[test]
fn short_segments_keep_their_label() {
    let seg = DiarSegment::new(TimeInterval::new(0.0, 0.05).unwrap(), "A");
    let labels = vec![seg.label.clone(), SpeakerLabel::new("B"), SpeakerLabel::new("B")];
    let e = |v: f32| Some(Embedding::new(vec![v, 1.0]).unwrap());
    let res = reverify_all(&labels, &[None, e(0.1), e(0.2)], 10).unwrap();
    assert_eq!(res[0].reverified.as_str(), "A");
    assert!(!res[0].low_confidence);
}
