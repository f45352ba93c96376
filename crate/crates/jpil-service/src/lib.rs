//! Localization service.
