use fultr::svmlight::{load_svmlight, parse_svmlight, save_svmlight, write_svmlight};
use fultr_core::dataset::{generate_synthetic, Dataset, Document, Query};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..6).prop_flat_map(|dim| {
        let doc = (prop::collection::vec(-1e6f64..1e6, dim), 0u8..5)
            .prop_map(|(features, label)| Document { features, label });
        let query = prop::collection::vec(doc, 1..6);
        prop::collection::vec(query, 1..5).prop_map(move |qs| {
            let queries = qs.into_iter().enumerate().map(|(i, docs)| Query { id: i as u64 * 3 + 1, docs }).collect();
            Dataset::new(queries, dim).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(data in dataset_strategy()) {
        let mut buf = Vec::new();
        write_svmlight(&data, &mut buf).unwrap();
        prop_assert_eq!(parse_svmlight(buf.as_slice()).unwrap(), data);
    }
}

#[test]
fn file_round_trip_of_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.txt");
    let data = generate_synthetic(12, 7, 5, 3);
    save_svmlight(&data, &path).unwrap();
    assert_eq!(load_svmlight(&path).unwrap(), data);
}

#[test]
fn missing_features_default_to_zero() {
    let data = parse_svmlight("3 qid:1 4:2.5\n0 qid:1 1:1\n".as_bytes()).unwrap();
    assert_eq!(data.feature_dim, 4);
    assert_eq!(data.queries[0].docs[0].features, vec![0.0, 0.0, 0.0, 2.5]);
}

#[test]
fn interleaved_qids_are_grouped() {
    let data = parse_svmlight("1 qid:5 1:1\n0 qid:6 1:2\n2 qid:5 1:3\n".as_bytes()).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.queries[0].id, 5);
    assert_eq!(data.queries[0].labels().collect::<Vec<_>>(), vec![1, 2]);
}
