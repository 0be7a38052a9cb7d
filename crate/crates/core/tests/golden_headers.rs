//! Column order of the exported tables is part of the file format.

use lgo::audit::{AggregateRow, AuditRow, GateUsageRow, MetricRecord, ThresholdRow, ThresholdSummary};
use lgo::experiment::{ParetoPoint, SimplifiedRow};
use lgo::export::{CsvRow, PoolRow, TopKRow};
use lgo::search::GenerationLog;

fn header<T: CsvRow>() -> String {
    T::HEADER.join(",")
}

#[test]
fn canonical_tables() {
    assert_eq!(header::<MetricRecord>(), "dataset,method,experiment,seed,metric,value");
    assert_eq!(
        header::<ThresholdSummary>(),
        "dataset,feature,unit,gate_cnt,models_with_gate_N,models_with_gate_pct,median,q1,q3,gate_type"
    );
    assert_eq!(header::<AuditRow>(), "feature,unit,median,q1,q3,anchor,rel_dev,band");
    assert_eq!(
        header::<GateUsageRow>(),
        "dataset,experiment,top_k,usage_pct,median_gates,complexity_median,cv_loss_median"
    );
}

#[test]
fn auxiliary_tables() {
    assert_eq!(header::<TopKRow>(), "rank,raw,simplified,equivalence_flag,cv_loss,complexity,seed");
    assert_eq!(header::<ThresholdRow>(), "seed,model,feature,input,gate_type,b_z,b_raw,unit");
    assert_eq!(header::<AggregateRow>(), "dataset,method,experiment,metric,mean,std,n_seeds,n_excluded");
    assert_eq!(header::<PoolRow>(), "rank,expression,cv_loss,complexity,seed,generation,train_loss,gates,on_front");
    assert_eq!(header::<GenerationLog>(), "generation,best_cv_loss,median_complexity,gate_count_best");
    assert_eq!(header::<ParetoPoint>(), "dataset,experiment,seed,cv_loss,complexity,gates,on_front");
    assert_eq!(
        header::<SimplifiedRow>(),
        "rank,expression,simplified,equivalence_flag,max_deviation,complexity_before,complexity_after"
    );
}

#[test]
fn serialized_rows_follow_headers() {
    let row = ThresholdSummary {
        dataset: "d".into(),
        feature: "map".into(),
        unit: "mmHg".into(),
        gate_cnt: 3,
        models_with_gate_n: 2,
        models_with_gate_pct: 50.0,
        median: 64.5,
        q1: 63.0,
        q3: 66.0,
        gate_type: "lgo_thre".into(),
    };
    let mut w = csv::Writer::from_writer(vec![]);
    w.serialize(&row).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), header::<ThresholdSummary>());
    assert_eq!(lines.next().unwrap(), "d,map,mmHg,3,2,50.0,64.5,63.0,66.0,lgo_thre");
}
