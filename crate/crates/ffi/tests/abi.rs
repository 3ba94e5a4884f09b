use std::ffi::{CStr, CString};
use std::ptr;

use softprompt::checkpoint;
use softprompt::generation::{generate, GenerationConfig};
use softprompt::model::{init_model, TransformerConfig};
use softprompt::prompt::{init_prompt_encoder, PromptEncoderConfig};
use softprompt::tokenizer::train_bpe;
use softprompt_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    vocab: CString,
    model: CString,
    prompt: CString,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let texts = [
        "Doctor: any pain today?\nPatient: a little in my knee.",
        "Input: hello\n Output: hi",
    ];
    let vocab = train_bpe(&texts, 300, 0).unwrap();
    let mut w = init_model::<f32>(&TransformerConfig::toy_s(vocab.len()), 1).unwrap();
    w.frozen = true;
    let p = init_prompt_encoder::<f32>(&PromptEncoderConfig::mlp(4, 16, w.config.d_model), 2).unwrap();
    let (vp, mp, pp) = (
        dir.path().join("vocab.json"),
        dir.path().join("m.ckpt"),
        dir.path().join("p.ckpt"),
    );
    vocab.save(&vp).unwrap();
    checkpoint::save_transformer(&mp, &w, 1, 0).unwrap();
    checkpoint::save_prompt(&pp, &p, 2, 0).unwrap();
    let c = |p: &std::path::Path| CString::new(p.to_str().unwrap()).unwrap();
    Fixture {
        vocab: c(&vp),
        model: c(&mp),
        prompt: c(&pp),
        _dir: dir,
    }
}

#[test]
fn load_generate_free_matches_library() {
    let f = fixture();
    unsafe {
        let (mut v, mut m, mut p) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(sp_vocab_load(f.vocab.as_ptr(), &mut v), SpStatus::Ok);
        assert_eq!(sp_model_load(f.model.as_ptr(), &mut m), SpStatus::Ok);
        assert_eq!(sp_prompt_load(f.prompt.as_ptr(), &mut p), SpStatus::Ok);
        assert!(sp_vocab_size(v) >= 259);

        let dialogue = CString::new("Doctor: any pain?\nPatient: my knee.").unwrap();
        let mut cfg = sp_generation_config_default();
        cfg.max_new_tokens = 6;
        let mut out = ptr::null_mut();
        assert_eq!(sp_generate(m, p, v, dialogue.as_ptr(), &cfg, &mut out), SpStatus::Ok);
        let got = CStr::from_ptr(out).to_str().unwrap().to_string();
        sp_string_free(out);

        let vocab = softprompt::tokenizer::Vocab::load(std::path::Path::new(f.vocab.to_str().unwrap())).unwrap();
        let model = checkpoint::load_transformer(std::path::Path::new(f.model.to_str().unwrap())).unwrap();
        let prompt = checkpoint::load_prompt(std::path::Path::new(f.prompt.to_str().unwrap())).unwrap();
        let g = GenerationConfig {
            max_new_tokens: 6,
            ..GenerationConfig::default()
        };
        let want = generate(
            &model,
            Some(&prompt),
            &vocab,
            "Doctor: any pain?\nPatient: my knee.",
            &g,
        )
        .unwrap();
        assert_eq!(got, want.replace('\0', " "));

        let mut ids = [0u32; 64];
        let mut len = 0usize;
        assert_eq!(
            sp_vocab_encode(v, dialogue.as_ptr(), ids.as_mut_ptr(), ids.len(), &mut len),
            SpStatus::Ok
        );
        assert_eq!(
            &ids[..len.min(64)],
            &vocab.encode("Doctor: any pain?\nPatient: my knee.")[..len.min(64)]
        );

        sp_prompt_free(p);
        sp_model_free(m);
        sp_vocab_free(v);
    }
}

#[test]
fn errors_set_code_and_message() {
    unsafe {
        let mut v = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.json").unwrap();
        assert_eq!(sp_vocab_load(missing.as_ptr(), &mut v), SpStatus::Io);
        assert!(v.is_null());
        let msg = CStr::from_ptr(sp_last_error_message()).to_str().unwrap();
        assert!(msg.contains("not/here"), "{msg}");

        assert_eq!(sp_vocab_load(ptr::null(), &mut v), SpStatus::NullPointer);
        let mut s = SpScore::default();
        assert_eq!(sp_rouge_n(ptr::null(), ptr::null(), 1, &mut s), SpStatus::NullPointer);

        let a = CString::new("a b").unwrap();
        assert_eq!(sp_rouge_n(a.as_ptr(), a.as_ptr(), 0, &mut s), SpStatus::InvalidArgument);
        assert_eq!(sp_rouge_n(a.as_ptr(), a.as_ptr(), 1, &mut s), SpStatus::Ok);
        assert!(sp_last_error_message().is_null());

        let bad = [0xffu8, 0];
        assert_eq!(
            sp_rouge_l(bad.as_ptr().cast(), a.as_ptr(), &mut s),
            SpStatus::InvalidUtf8
        );

        sp_vocab_free(ptr::null_mut());
        sp_string_free(ptr::null_mut());
    }
}

#[test]
fn metrics_match_library() {
    let c = CString::new("the patient reports knee pain").unwrap();
    let r = CString::new("patient has knee pain").unwrap();
    unsafe {
        let mut s = SpScore::default();
        assert_eq!(sp_rouge_n(c.as_ptr(), r.as_ptr(), 1, &mut s), SpStatus::Ok);
        let want = softprompt::metrics::rouge_n("the patient reports knee pain", "patient has knee pain", 1);
        assert_eq!((s.precision, s.recall, s.f1), (want.precision, want.recall, want.f1));
        assert_eq!(sp_rouge_l(c.as_ptr(), r.as_ptr(), &mut s), SpStatus::Ok);
        assert_eq!(
            s.f1,
            softprompt::metrics::rouge_l("the patient reports knee pain", "patient has knee pain").f1
        );

        let cs = [c.as_ptr(), r.as_ptr()];
        let rs = [r.as_ptr(), r.as_ptr()];
        let mut b = -1.0;
        assert_eq!(sp_bleu(cs.as_ptr(), rs.as_ptr(), 2, &mut b), SpStatus::Ok);
        let want = softprompt::metrics::bleu(
            &["the patient reports knee pain", "patient has knee pain"],
            &["patient has knee pain", "patient has knee pain"],
        )
        .unwrap();
        assert_eq!(b, want);
    }
    assert!((sp_aggregate(0.2, 0.4, 0.6, 0.8, 0.0, false) - 0.5).abs() < 1e-12);
    assert!((sp_aggregate(0.2, 0.4, 0.6, 0.8, 1.0, true) - 0.6).abs() < 1e-12);
}

#[test]
fn header_declares_api_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/softprompt.h")).unwrap();
    for name in [
        "sp_last_error_message",
        "sp_vocab_load",
        "sp_vocab_free",
        "sp_model_load",
        "sp_model_free",
        "sp_prompt_load",
        "sp_prompt_free",
        "sp_generate",
        "sp_string_free",
        "sp_rouge_n",
        "sp_rouge_l",
        "sp_bleu",
        "sp_aggregate",
        "typedef struct SpModel SpModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let Ok(cc) = which_cc() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"softprompt.h\"\nint main(void) { SpGenerationConfig c = sp_generation_config_default(); return c.top_k == 1 ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
