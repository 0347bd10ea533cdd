//! Prompt assembly: description system prompt plus the user prompt built from
//! the initial, constraint, attribute, and return-format blocks, in that
//! fixed order.

use crate::data::{ConstraintSet, DatasetDescriptor, DatasetItem};
use crate::gateway::{TemplateError, TemplateSet};

/// A fully rendered prompt pair, ready to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub batch_size: usize,
}

/// Deterministic concatenation of the prompt blocks. Constraint prefix and
/// suffix only appear when there are constraints; the attribute directive only
/// when guidance is active.
pub fn assemble_prompt(
    templates: &TemplateSet,
    descriptor: &DatasetDescriptor,
    constraints: &ConstraintSet,
    few_shot: &[DatasetItem],
    attribute: Option<&str>,
    batch_size: usize,
) -> Result<PromptBundle, TemplateError> {
    let system = templates.render(
        "description",
        &[("description for dataset", descriptor.description.as_str())],
    )?;

    let few_shot_block = few_shot
        .iter()
        .map(DatasetItem::prompt_json)
        .collect::<Vec<_>>()
        .join("\n");

    let constraint_block = if constraints.is_empty() {
        String::new()
    } else {
        let prefix = &templates.get("constraints_prefix")?.body;
        let suffix = &templates.get("constraints_suffix")?.body;
        format!("{prefix}\n{}\n{suffix}", constraints.constraints.join("\n"))
    };

    let batch = batch_size.to_string();
    let mut user = templates.render(
        "initial",
        &[
            ("batch_size", batch.as_str()),
            ("few_shot_examples", few_shot_block.as_str()),
            ("dataset_constraint", constraint_block.as_str()),
        ],
    )?;

    if let Some(attribute) = attribute {
        user.push('\n');
        user.push_str(&templates.render("attribute_directive", &[("attribute", attribute)])?);
    }

    let data_format = templates.data_format(descriptor.answer_format, descriptor.with_label)?;
    user.push('\n');
    user.push_str(&templates.render(
        "return_format",
        &[("batch_size", batch.as_str()), ("data_format", data_format)],
    )?);

    Ok(PromptBundle {
        system,
        user,
        batch_size,
    })
}
