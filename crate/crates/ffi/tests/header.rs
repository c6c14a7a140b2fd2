use std::path::Path;

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cdmi.h"))
        .unwrap();
    for name in [
        "typedef struct CdmiCorpus CdmiCorpus;",
        "typedef struct CdmiCheckpoint CdmiCheckpoint;",
        "CDMI_OK = 0",
        "CDMI_BUFFER_TOO_SMALL = 8",
        "cdmi_last_error(void)",
        "cdmi_levenshtein_norm(",
        "cdmi_jaro_winkler_norm(",
        "cdmi_improvement_factor(",
        "cdmi_corpus_load(",
        "cdmi_corpus_free(",
        "cdmi_checkpoint_load(",
        "cdmi_checkpoint_free(",
        "cdmi_reconstruct_field(",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
    assert!(h.contains("#ifndef CDMI_H"));
}
