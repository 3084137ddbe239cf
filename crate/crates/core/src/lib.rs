//! Subgradient clock auctions for combinatorial markets.
//!
//! Prices are linear in a parameter vector through a bundle feature map.
//! Each round the auctioneer quotes prices, collects one bid per agent,
//! solves the seller's revenue problem and takes a projected subgradient
//! step on the regularized dual objective.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activity;
pub mod auction;
pub mod bidders;
pub mod encodings;
pub mod error;
pub mod market;
pub mod vecops;
pub mod verify;

pub use encodings::{BaseScheme, Bundle, FeatureMap, FeatureRow};
pub use error::{Error, Result};
pub use market::{AllocationVector, BidVector, PriceOracle, PriceParams, Quote, ValuationProfile};
