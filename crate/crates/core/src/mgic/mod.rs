//! Multigrid-in-channels blocks: a channel hierarchy of grouped template
//! applications joined by learned restriction and prolongation, with a
//! fully coupled template on the coarsest level.

mod block;
mod config;
mod shortcut;
mod template;
mod transfer;

pub use block::{build_mgic_block, Level, MgicBlock};
pub use config::{effective_group_size, level_group_sizes, level_widths, num_levels, GroupClamp, MgicConfig};
pub use shortcut::ChannelShortcut;
pub use template::{BlockTemplate, SeqInstance, SeqLayer, TemplateInstance};
pub use transfer::{init_transfer, TransferPair};
