// SPDX-License-Identifier: Apache-2.0

//! Dynamic-point removal for accumulated point-cloud maps using local
//! convex-hull density, plus evaluation metrics and a synthetic scene generator.

pub mod assignment;
pub mod cloud;
pub mod clustering;
pub mod filter;
pub mod ground;
pub mod hull;
pub mod metrics;
pub mod scenegen;
pub mod spatial;
