//! Dump files and report emitters.

mod dump;
mod report;

pub use dump::{decode_dump, encode_dump, read_dump, write_dump, HEADER_LEN, MAGIC, VERSION};
pub use report::{
    emit_reports, fmt_num, loss_csv, metrics_csv, parse_rejection_csv, parse_reliability_csv, rejection_csv,
    rejection_svg, reliability_csv, reliability_svg, UNDEFINED,
};
