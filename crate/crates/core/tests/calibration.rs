//! Trained classifiers on large samples should approach the Bayes AUC.

use sepbias::datagen::{sample_population, PopulationSpec};
use sepbias::experiments::experiment_train_config;
use sepbias::learner::{train_classifier, Arch, Target};
use sepbias::metrics::roc_auc;
use sepbias::oracle::{bayes_class_auc, bayes_group_auc};

#[test]
fn group_classifier_matches_bayes_auc() {
    for target in [0.6, 0.9] {
        let spec = PopulationSpec::default().with_separability(target).unwrap();
        let train = sample_population(&spec, 20_000, 1).unwrap();
        let test = sample_population(&spec, 10_000, 2).unwrap();
        let model = train_classifier(&train, Target::Group, Arch::Linear, &experiment_train_config()).unwrap();
        let auc = roc_auc(&model.score_dataset(&test).unwrap(), &test.groups()).unwrap();
        let bayes = bayes_group_auc(&spec, &test).unwrap();
        assert!((auc - bayes).abs() < 0.005, "target {target}: trained {auc}, Bayes {bayes}");
        assert!((bayes - target).abs() < 0.02, "target {target}: Bayes {bayes}");
    }
}

#[test]
fn label_classifier_matches_bayes_auc() {
    let spec = PopulationSpec::default().with_separability(0.9).unwrap();
    let train = sample_population(&spec, 20_000, 3).unwrap();
    let test = sample_population(&spec, 10_000, 4).unwrap();
    let model = train_classifier(&train, Target::ObservedLabel, Arch::Mlp, &experiment_train_config()).unwrap();
    let auc = roc_auc(&model.score_dataset(&test).unwrap(), &test.true_labels()).unwrap();
    let bayes = bayes_class_auc(&spec, &test).unwrap();
    assert!(auc <= bayes + 0.005 && auc > bayes - 0.01, "trained {auc}, Bayes {bayes}");
}
