#include "doctest.h"
#include "properties.hpp"

TEST_CASE("invariant property suites") {
  for (const auto& r : properties::invariant_suites(1000, 2024)) {
    CAPTURE(r.name);
    CAPTURE(r.first_failure);
    CHECK(r.cases == 1000);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("library predictors match the scalar oracle") {
  double worst = 0.0;
  const auto r = properties::oracle_equivalence(100, 77, 1e-5, &worst);
  CAPTURE(r.first_failure);
  CAPTURE(worst);
  CHECK(r.passed());
}
