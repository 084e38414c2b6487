use super::data::Dataset;
use super::model::{objective, ModelFamily};
use super::partition::Partition;

/// `(1/M) Σ_i (1/N_i) Σ_{j ∈ area i} F_j(w)`.
pub fn global_loss(model: &dyn ModelFamily, w: &[f64], partition: &Partition) -> f64 {
    let m = partition.num_areas();
    (0..m)
        .map(|i| {
            let clients = partition.area_clients(i);
            clients
                .iter()
                .map(|c| objective(model, w, &c.samples))
                .sum::<f64>()
                / clients.len() as f64
        })
        .sum::<f64>()
        / m as f64
}

/// Fraction of `data` whose predicted label matches.
pub fn accuracy(model: &dyn ModelFamily, w: &[f64], data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .samples
        .iter()
        .filter(|s| model.predict(w, &s.features) == s.label)
        .count();
    hits as f64 / data.len() as f64
}
