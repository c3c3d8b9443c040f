use mti_core::model::save_weights;

use crate::args::ExportArgs;
use crate::error::CliError;
use crate::session;

pub fn run_export(args: &ExportArgs) -> Result<(), CliError> {
    let (model, _) = session::load_model(&args.model)?;
    save_weights(&model.weights, &args.out).map_err(|e| match e {
        mti_core::ModelError::Io(source) => CliError::io(&args.out, source),
        other => other.into(),
    })?;
    println!("wrote {} ({} parameters, hash {})", args.out.display(), model.weights.parameter_count(), model.hash());
    Ok(())
}
