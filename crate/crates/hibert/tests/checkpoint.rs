mod common;

use std::fs;

use common::{bytes, Workspace};
use hibert::checkpoint::{read_manifest, ArrayKind, Checkpoint, HEADER_BYTES, MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE};
use hibert::commands::pretrain_with;
use hibert::dataset::{build_examples, read_corpus};
use hibert::CliError;

fn trained(ws: &Workspace, variant: &str, layer: Option<usize>) -> Checkpoint {
    let config = ws.config(variant, layer, &["pretrain.total_steps=3"]);
    let docs = read_corpus(config.data.corpus.as_deref().unwrap()).unwrap();
    let built = build_examples(&config, &docs, 0).unwrap();
    pretrain_with(&config, 0, &built, &ws.path("ck"), None).unwrap()
}

fn message(e: CliError) -> String {
    assert_eq!(e.exit_code(), 3, "{e}");
    e.to_string()
}

#[test]
fn save_load_save_is_byte_identical() {
    let ws = Workspace::new(30);
    let ck = trained(&ws, "lower_nsp", Some(1));
    let a = ws.path("ck");
    let back = Checkpoint::load(&a).unwrap();
    assert_eq!(back.model.params.fingerprint_all(), ck.model.params.fingerprint_all());
    assert_eq!(back.adam, ck.adam);
    assert_eq!(back.progress, ck.progress);
    let b = ws.path("again");
    back.save(&b).unwrap();
    for f in [MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE] {
        assert_eq!(bytes(&a, f), bytes(&b, f), "{f} differs");
    }
}

#[test]
fn layout_matches_manifest() {
    let ws = Workspace::new(30);
    let ck = trained(&ws, "bert_baseline", None);
    let m = read_manifest(&ws.path("ck")).unwrap();
    let raw = bytes(&ws.path("ck"), PAYLOAD_FILE);
    assert_eq!(&raw[..8], b"HIBERTCK");
    assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()) as usize, m.arrays.len());
    assert_eq!(m.arrays.len(), 4 * ck.model.params.len());
    let mut offset = HEADER_BYTES as u64;
    for a in &m.arrays {
        assert_eq!(a.offset, offset);
        offset += 8 * a.len;
    }
    assert_eq!(offset as usize, raw.len());
    // the first array is the first parameter, verbatim
    let first = ck.model.params.iter().next().unwrap().2;
    let start = HEADER_BYTES;
    let v = f64::from_le_bytes(raw[start..start + 8].try_into().unwrap());
    assert_eq!(v.to_bits(), first.data()[0].to_bits());
    assert_eq!(m.arrays[0].kind, ArrayKind::Param);
}

#[test]
fn flipped_byte_names_the_array() {
    let ws = Workspace::new(30);
    trained(&ws, "bert_baseline", None);
    let dir = ws.path("ck");
    let m = read_manifest(&dir).unwrap();
    for idx in [0, 5, m.arrays.len() - 1] {
        let target = &m.arrays[idx];
        let mut raw = bytes(&dir, PAYLOAD_FILE);
        let pos = target.offset as usize + 3;
        raw[pos] ^= 0x40;
        let bad = ws.path(&format!("bad{idx}"));
        hibert::checkpoint::copy_checkpoint(&dir, &bad).unwrap();
        fs::write(bad.join(PAYLOAD_FILE), &raw).unwrap();
        let msg = message(Checkpoint::load(&bad).unwrap_err());
        assert!(msg.contains(&format!("`{}`", target.name)), "{msg}");
        assert!(msg.contains(&format!("{:?}", target.kind)), "{msg}");
    }
}

#[test]
fn version_mismatch_is_rejected() {
    let ws = Workspace::new(30);
    trained(&ws, "bert_baseline", None);
    let dir = ws.path("ck");

    let newer = ws.path("newer-manifest");
    hibert::checkpoint::copy_checkpoint(&dir, &newer).unwrap();
    let text = fs::read_to_string(newer.join(MANIFEST_FILE)).unwrap();
    fs::write(newer.join(MANIFEST_FILE), text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
    let msg = message(Checkpoint::load(&newer).unwrap_err());
    assert!(msg.contains("version"), "{msg}");

    let header = ws.path("newer-header");
    hibert::checkpoint::copy_checkpoint(&dir, &header).unwrap();
    let mut raw = bytes(&dir, PAYLOAD_FILE);
    raw[8] = 9;
    fs::write(header.join(PAYLOAD_FILE), &raw).unwrap();
    let msg = message(Checkpoint::load(&header).unwrap_err());
    assert!(msg.contains("format version 9"), "{msg}");
}

#[test]
fn truncation_and_vocab_tampering_are_rejected() {
    let ws = Workspace::new(30);
    trained(&ws, "bert_baseline", None);
    let dir = ws.path("ck");

    let cut = ws.path("cut");
    hibert::checkpoint::copy_checkpoint(&dir, &cut).unwrap();
    let raw = bytes(&dir, PAYLOAD_FILE);
    fs::write(cut.join(PAYLOAD_FILE), &raw[..raw.len() - 8]).unwrap();
    message(Checkpoint::load(&cut).unwrap_err());

    let vocab = ws.path("vocab");
    hibert::checkpoint::copy_checkpoint(&dir, &vocab).unwrap();
    let text = fs::read_to_string(vocab.join(VOCAB_FILE)).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let n = lines.len();
    lines.swap(n - 1, n - 2);
    fs::write(vocab.join(VOCAB_FILE), lines.join("\n") + "\n").unwrap();
    let msg = message(Checkpoint::load(&vocab).unwrap_err());
    assert!(msg.contains("vocab"), "{msg}");
}
