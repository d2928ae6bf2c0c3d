use std::collections::HashSet;

use proptest::prelude::*;

use sentibert::tokenizer::{normalize, Vocabulary, CLS_ID, PAD_ID, SEP_ID, UNK_ID};

fn word() -> impl Strategy<Value = String> {
    "[a-eđơàế]{1,6}"
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(word(), 1..8).prop_map(|w| w.join(" ")), 1..12)
}

fn trained(corpus: &[String]) -> Vocabulary {
    Vocabulary::train(corpus.iter().map(String::as_str), 80, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoded_shape_laws(corpus in corpus(), text in "\\PC{0,60}", seq_len in 2usize..40) {
        let v = trained(&corpus);
        let e = v.encode(&text, seq_len).unwrap();
        prop_assert_eq!(e.ids.len(), seq_len);
        prop_assert_eq!(e.attention_mask.len(), seq_len);
        prop_assert!(e.attention_mask.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(e.ids[0], CLS_ID);
        let n = e.real_length();
        prop_assert!(n >= 2);
        prop_assert_eq!(e.ids[n - 1], SEP_ID);
        prop_assert!(e.ids[n..].iter().all(|&i| i == PAD_ID));
        prop_assert_eq!(v.encode(&text, seq_len).unwrap(), e);
    }

    #[test]
    fn decode_inverts_encode_on_in_vocabulary_text(corpus in corpus(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..6)) {
        let v = trained(&corpus);
        let words: Vec<&str> = corpus.iter().flat_map(|t| t.split_whitespace()).collect();
        let text = picks.iter().map(|i| *i.get(&words)).collect::<Vec<_>>().join(" ");
        let e = v.encode(&text, 256).unwrap();
        prop_assert!(!e.real_ids().contains(&UNK_ID));
        prop_assert_eq!(v.decode(&e.ids).unwrap(), normalize(&text));
    }

    #[test]
    fn training_is_deterministic_and_well_formed(corpus in corpus()) {
        let a = trained(&corpus);
        prop_assert_eq!(a.to_text(), trained(&corpus).to_text());
        let tokens = a.tokens();
        prop_assert_eq!(&tokens[..5], &["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]);
        let distinct: HashSet<&String> = tokens.iter().collect();
        prop_assert_eq!(distinct.len(), tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            prop_assert_eq!(a.id(t), Some(i as u32));
        }
        for w in corpus.iter().flat_map(|t| t.split_whitespace()) {
            let mut chars = w.chars();
            let first = chars.next().unwrap().to_string();
            prop_assert!(a.id(&first).is_some());
            for c in chars {
                let piece = format!("##{}", c);
                prop_assert!(a.id(&piece).is_some());
            }
        }
    }
}

#[test]
fn vocabulary_file_bytes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    let v = Vocabulary::train(["quán này ngon", "phở ngon quá", "nhân viên chậm"], 60, 1).unwrap();
    v.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    Vocabulary::load(&path).unwrap().save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}
