//! ECG records, diagnosis labels and the scored-class table.

mod class_map;
mod format;
mod leads;
mod record;

pub use class_map::{
    ClassEntry, ClassMap, BRADYCARDIA_CODE, N_MERGED, N_SCORED, SINUS_RHYTHM_CODE,
};
pub use format::{
    list_records, load_dx_codes, load_record, parse_record, parse_record_csv, save_record,
    save_record_csv, write_header, write_record, write_record_csv,
};
pub use leads::{
    derive_limb_leads, limb_leads, select_training_leads, DERIVED_LEADS, STANDARD_LEADS,
    TRAINING_LEADS,
};
pub use record::{labels_from_codes, EcgRecord, LabelVector, LeadFormat, Sex};
