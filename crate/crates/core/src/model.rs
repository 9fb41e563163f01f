//! Fitting the imputation model on one cross-validation configuration.

use crate::dataset::{
    build_training_instances, FoldAssignment, FoldInstances, FoldRoles, ObservationTable,
};
use crate::error::{Error, Result};
use crate::gbt::{self, GbtParams, TreeEnsemble};

/// Trains on the train folds of `roles` with early stopping on the
/// validation fold. Only stations flagged in `predictors` contribute
/// predictor columns; every station stays a prediction target.
pub fn fit_on_folds(
    table: &ObservationTable,
    folds: &FoldAssignment,
    roles: &FoldRoles,
    predictors: &[bool],
    params: &GbtParams,
    seed: u64,
) -> Result<(TreeEnsemble, FoldInstances)> {
    let instances = build_training_instances(table, folds, roles, predictors, seed);
    if instances.train.is_empty() || instances.validation.is_empty() {
        return Err(Error::Data(format!(
            "fold configuration test={} validation={} leaves no training or validation data",
            roles.test, roles.validation
        )));
    }
    let model = gbt::train(
        &instances.train.x,
        &instances.train.y,
        &instances.validation.x,
        &instances.validation.y,
        params,
        seed,
    )?;
    Ok((model, instances))
}
