//! Data model for daily multi-stream panels: calendar-aware series, CSV
//! ingestion, window extraction and an epidata HTTP client.

pub mod epidata;
mod panel;
mod window;

pub use panel::{
    load_panel_csv, load_region_meta_csv, read_panel_csv, read_region_meta_csv, write_panel_csv,
    write_region_meta_csv, DailySeries, GapPolicy, PanelBuilder, PanelLoad, PanelSchema, RegionMeta,
    RegionMetaSet, RowIssue, StreamKind, StreamPanel,
};
pub use window::{extract_window, Window};
