mod common;

use std::collections::BTreeSet;
use std::fs;

use common::{bytes, Workspace};
use hibert::checkpoint::{Checkpoint, PAYLOAD_FILE};
use hibert::commands::sweep;
use hibert::report::read_rows;

#[test]
fn eleven_nsp_placements_at_twelve_layers_give_eleven_rows_per_seed() {
    let ws = Workspace::new(30);
    let config = ws.config(
        "lower_nsp",
        Some(6),
        &[
            "encoder.num_layers=12",
            "seeds=[0, 1]",
            "pretrain.total_steps=2",
            "finetune.total_steps=1",
            "sweep.variants=[\"lower_nsp\"]",
        ],
    );
    let s = sweep(&config, &ws.path("out")).unwrap();
    assert!(s.rejected.is_empty());
    assert_eq!(s.rows.len(), 22);
    for seed in [0, 1] {
        let layers: BTreeSet<usize> = s.rows.iter().filter(|r| r.seed == seed).map(|r| r.nsp_layer).collect();
        assert_eq!(layers, (1..=11).collect());
    }
    assert!(s.rows.iter().all(|r| r.mlm_layer == 12 && r.metric == "f1"));
}

#[test]
fn shared_pretraining_is_never_mutated_and_reruns_skip() {
    let ws = Workspace::new(30);
    let config = ws.config(
        "bert_baseline",
        None,
        &["pretrain.total_steps=2", "finetune.total_steps=2", "sweep.ft_concat=[\"none\", \"cls_embedding\", \"nsp_output\"]"],
    );
    let out = ws.path("out");
    let s = sweep(&config, &out).unwrap();
    assert_eq!(s.rows.len(), 3);
    // all three cells share one pre-training run
    let shared: Vec<_> = fs::read_dir(out.join("pretrain")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(shared.len(), 1);
    let before = bytes(&shared[0], PAYLOAD_FILE);
    let pristine = Checkpoint::load(&shared[0]).unwrap().model.params.fingerprint_all();
    for cell in fs::read_dir(out.join("cells")).unwrap() {
        let cell = cell.unwrap().path();
        assert_eq!(bytes(&cell.join("pretrained"), PAYLOAD_FILE), before);
        let tuned = Checkpoint::load(&cell.join("finetuned")).unwrap();
        assert_ne!(tuned.model.params.fingerprint(tuned.model.encoder.all_params()), pristine);
    }

    let again = sweep(&config, &out).unwrap();
    assert_eq!(again.skipped, 3);
    assert!(again.rows.is_empty());
    assert_eq!(read_rows(&out).unwrap().len(), 3);
    assert_eq!(bytes(&shared[0], PAYLOAD_FILE), before);
}

#[test]
fn nli_sweep_rejects_every_concat_cell() {
    let ws = Workspace::new(30);
    let config = ws.config(
        "bert_baseline",
        None,
        &[
            "finetune.task=\"nli\"",
            "pretrain.total_steps=2",
            "finetune.total_steps=2",
            "sweep.ft_concat=[\"none\", \"cls_embedding\", \"nsp_output\"]",
        ],
    );
    let s = sweep(&config, &ws.path("out")).unwrap();
    assert_eq!(s.rows.len(), 1);
    assert_eq!(s.rows[0].metric, "accuracy");
    assert_eq!(s.rejected.len(), 2);
    let logged = fs::read_to_string(ws.path("out/rejected.jsonl")).unwrap();
    assert_eq!(logged.lines().count(), 2);
}
