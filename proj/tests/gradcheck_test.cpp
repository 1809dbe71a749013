#include <fdnet/gradcheck_suite.hpp>

#include "test_util.hpp"

using namespace fdn;

TEST_CASE("grad_check on a quadratic is near exact") {
  Tensor x({3}, {1.0f, 2.0f, 3.0f});
  auto res = grad_check(
      "quadratic", [](const auto& t) { return sum(mul(t, t)); }, x, 1e-7);
  CHECK(res.pass);
  CHECK(res.max_rel_err <= 1e-7);

  // And the analytic gradient itself is [2,4,6].
  Tape tape;
  TapeScope scope(tape);
  x.set_requires_grad(true);
  tape.backward(sum(mul(x, x)));
  auto g = tape.grad_of(x);
  CHECK(g[0] == Catch::Approx(2.0f));
  CHECK(g[1] == Catch::Approx(4.0f));
  CHECK(g[2] == Catch::Approx(6.0f));
}

TEST_CASE("grad_check rejects non-scalar functions") {
  Tensor x({2, 2}, 1.0f);
  CHECK_THROWS_AS(grad_check("bad", [](const auto& t) { return relu(t); }, x,
                             1e-4),
                  UsageError);
}

TEST_CASE("every differentiable operation passes finite differences") {
  auto results = run_gradcheck_suite(/*seed=*/42, /*instances=*/3, 1e-4);
  for (const auto& r : results) {
    INFO(r.name << " max_rel_err=" << r.max_rel_err);
    CHECK(r.pass);
  }
}
