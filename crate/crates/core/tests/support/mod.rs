pub mod coverage_oracle;
