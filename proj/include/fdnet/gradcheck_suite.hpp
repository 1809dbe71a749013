#pragma once

#include <fdnet/denoise.hpp>
#include <fdnet/gradcheck.hpp>

namespace fdn {

// Finite-difference verification of every differentiable operation in the
// library, each at `instances` random points. Median and max-pool inputs are
// drawn with all-distinct values so the check stays away from tie points
// where the subgradient convention kicks in. Returns one aggregated result
// per operation (worst instance).
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed,
                                                        int instances,
                                                        double tol) {
  std::vector<GradCheckResult> results;

  auto rng_for = [&](const std::string& op, int inst) {
    return Rng::derive(seed, op + "#" + std::to_string(inst));
  };
  auto rand_t = [](const Shape& s, Rng& rng, double lo, double hi) {
    Tensor t(s);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
  };
  // Values on a shuffled grid: all distinct, minimum gap well above the
  // finite-difference step.
  auto rand_distinct = [](const Shape& s, Rng& rng) {
    Tensor t(s);
    auto d = t.data();
    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) order[i] = i;
    for (std::size_t i = d.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    for (std::size_t i = 0; i < d.size(); ++i)
      d[order[i]] = -1.0f + 2.0f * static_cast<float>(i) /
                                static_cast<float>(d.size());
    return t;
  };
  // Weighted-sum reduction with a fixed random upstream direction.
  auto reduce = [](const auto& y, const Tensor& r) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    return sum(mul(y, tensor_cast<S>(r)));
  };

  auto run = [&](const std::string& name, auto make_case) {
    GradCheckResult worst;
    worst.name = name;
    worst.tolerance = tol;
    worst.pass = true;
    for (int i = 0; i < instances; ++i) {
      Rng rng = rng_for(name, i);
      GradCheckResult r = make_case(rng);
      if (r.max_rel_err > worst.max_rel_err) worst.max_rel_err = r.max_rel_err;
      worst.pass = worst.pass && r.pass;
    }
    results.push_back(worst);
  };

  // --- elementwise ---------------------------------------------------------
  run("add", [&](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1), b = rand_t({3, 4}, rng, -1, 1);
    Tensor r = rand_t({3, 4}, rng, -1, 1);
    return grad_check("add", [&](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return reduce(add(x, tensor_cast<S>(b)), r);
    }, a, tol);
  });
  run("sub", [&](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1), b = rand_t({3, 4}, rng, -1, 1);
    Tensor r = rand_t({3, 4}, rng, -1, 1);
    return grad_check("sub", [&](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return reduce(sub(tensor_cast<S>(b), x), r);
    }, a, tol);
  });
  run("mul", [&](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1), b = rand_t({3, 4}, rng, -1, 1);
    Tensor r = rand_t({3, 4}, rng, -1, 1);
    return grad_check("mul", [&](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return reduce(mul(x, tensor_cast<S>(b)), r);
    }, a, tol);
  });
  run("relu", [&](Rng& rng) {
    // Keep values away from the kink so the difference quotient is valid.
    Tensor a = rand_t({4, 5}, rng, -1, 1);
    for (auto& v : a.data())
      if (std::abs(v) < 0.1f) v = v < 0 ? v - 0.1f : v + 0.1f;
    Tensor r = rand_t({4, 5}, rng, -1, 1);
    return grad_check("relu", [&](const auto& x) { return reduce(relu(x), r); },
                      a, tol);
  });

  // --- matrix products ------------------------------------------------------
  run("matmul_lhs", [&](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1), b = rand_t({4, 2}, rng, -1, 1);
    Tensor r = rand_t({3, 2}, rng, -1, 1);
    return grad_check("matmul_lhs", [&](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return reduce(matmul(x, tensor_cast<S>(b)), r);
    }, a, tol);
  });
  run("matmul_rhs", [&](Rng& rng) {
    Tensor a = rand_t({3, 4}, rng, -1, 1), b = rand_t({4, 2}, rng, -1, 1);
    Tensor r = rand_t({3, 2}, rng, -1, 1);
    return grad_check("matmul_rhs", [&](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return reduce(matmul(tensor_cast<S>(a), x), r);
    }, b, tol);
  });
  run("bmm", [&](Rng& rng) {
    Tensor a = rand_t({2, 3, 4}, rng, -1, 1), b = rand_t({2, 4, 3}, rng, -1, 1);
    Tensor r = rand_t({2, 3, 3}, rng, -1, 1);
    return grad_check("bmm", [&](const auto& x) {
      using S = typename std::decay_t<decltype(x)>::Scalar;
      return reduce(bmm(x, tensor_cast<S>(b)), r);
    }, a, tol);
  });
  run("transpose", [&](Rng& rng) {
    Tensor a = rand_t({3, 5}, rng, -1, 1);
    Tensor r = rand_t({5, 3}, rng, -1, 1);
    return grad_check("transpose",
                      [&](const auto& x) { return reduce(transpose2d(x), r); },
                      a, tol);
  });

  // --- convolution ----------------------------------------------------------
  run("conv2d_input", [&](Rng& rng) {
    Tensor x = rand_t({1, 2, 5, 5}, rng, -1, 1);
    Tensor w = rand_t({3, 2, 3, 3}, rng, -1, 1);
    Tensor r = rand_t({1, 3, 5, 5}, rng, -1, 1);
    return grad_check("conv2d_input", [&](const auto& xs) {
      using S = typename std::decay_t<decltype(xs)>::Scalar;
      return reduce(conv2d(xs, tensor_cast<S>(w), 1, 1), r);
    }, x, tol);
  });
  run("conv2d_kernel", [&](Rng& rng) {
    Tensor x = rand_t({1, 2, 5, 5}, rng, -1, 1);
    Tensor w = rand_t({3, 2, 3, 3}, rng, -1, 1);
    Tensor r = rand_t({1, 3, 5, 5}, rng, -1, 1);
    return grad_check("conv2d_kernel", [&](const auto& ws) {
      using S = typename std::decay_t<decltype(ws)>::Scalar;
      return reduce(conv2d(tensor_cast<S>(x), ws, 1, 1), r);
    }, w, tol);
  });
  run("conv2d_strided", [&](Rng& rng) {
    Tensor x = rand_t({1, 2, 5, 5}, rng, -1, 1);
    Tensor w = rand_t({2, 2, 3, 3}, rng, -1, 1);
    Tensor r = rand_t({1, 2, 4, 4}, rng, -1, 1);
    return grad_check("conv2d_strided", [&](const auto& xs) {
      using S = typename std::decay_t<decltype(xs)>::Scalar;
      return reduce(conv2d(xs, tensor_cast<S>(w), 2, 2), r);
    }, x, tol);
  });
  run("channel_bias", [&](Rng& rng) {
    Tensor x = rand_t({2, 3, 4, 4}, rng, -1, 1);
    Tensor b = rand_t({3}, rng, -1, 1);
    Tensor r = rand_t({2, 3, 4, 4}, rng, -1, 1);
    return grad_check("channel_bias", [&](const auto& bs) {
      using S = typename std::decay_t<decltype(bs)>::Scalar;
      return reduce(add_channel_bias(tensor_cast<S>(x), bs), r);
    }, b, tol);
  });

  // --- softmax and reductions ------------------------------------------------
  run("softmax", [&](Rng& rng) {
    Tensor x = rand_t({3, 6}, rng, -2, 2);
    Tensor r = rand_t({3, 6}, rng, -1, 1);
    return grad_check("softmax",
                      [&](const auto& xs) { return reduce(softmax(xs, 1), r); },
                      x, tol);
  });
  run("softmax_axis1_of3", [&](Rng& rng) {
    Tensor x = rand_t({2, 4, 3}, rng, -2, 2);
    Tensor r = rand_t({2, 4, 3}, rng, -1, 1);
    return grad_check("softmax_axis1_of3",
                      [&](const auto& xs) { return reduce(softmax(xs, 1), r); },
                      x, tol);
  });
  run("mean", [&](Rng& rng) {
    Tensor x = rand_t({4, 4}, rng, -1, 1);
    return grad_check("mean", [&](const auto& xs) { return mean(xs); }, x, tol);
  });
  run("max_pool2d", [&](Rng& rng) {
    Tensor x = rand_distinct({1, 2, 6, 6}, rng);
    Tensor r = rand_t({1, 2, 3, 3}, rng, -1, 1);
    return grad_check("max_pool2d",
                      [&](const auto& xs) { return reduce(max_pool2d(xs), r); },
                      x, tol);
  });
  run("avg_pool_global", [&](Rng& rng) {
    Tensor x = rand_t({2, 3, 4, 4}, rng, -1, 1);
    Tensor r = rand_t({2, 3}, rng, -1, 1);
    return grad_check(
        "avg_pool_global",
        [&](const auto& xs) { return reduce(avg_pool_global(xs), r); }, x, tol);
  });

  // --- layers -----------------------------------------------------------------
  auto bn_case = [&](const std::string& name, Mode mode, int target) {
    run(name, [&, mode, target](Rng& rng) {
      Tensor x = rand_t({3, 2, 4, 4}, rng, -1, 1);
      Tensor gamma = rand_t({2}, rng, 0.5, 1.5);
      Tensor beta = rand_t({2}, rng, -0.5, 0.5);
      Tensor rm = rand_t({2}, rng, -0.2, 0.2);
      Tensor rv = rand_t({2}, rng, 0.5, 1.5);
      Tensor r = rand_t({3, 2, 4, 4}, rng, -1, 1);
      auto f = [&](const auto& t) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        BatchNormT<S> bn(2);
        bn.gamma = target == 1 ? t.view({2}) : tensor_cast<S>(gamma);
        bn.beta = target == 2 ? t.view({2}) : tensor_cast<S>(beta);
        for (int c = 0; c < 2; ++c) {
          bn.running_mean[c] = static_cast<S>(rm.data()[c]);
          bn.running_var[c] = static_cast<S>(rv.data()[c]);
        }
        TensorT<S> in = target == 0 ? t.view({3, 2, 4, 4}) : tensor_cast<S>(x);
        return reduce(batch_norm(in, bn, mode), r);
      };
      Tensor probe = target == 0 ? x : (target == 1 ? gamma : beta);
      return grad_check(name, f, probe, tol);
    });
  };
  bn_case("batch_norm_train_x", Mode::Train, 0);
  bn_case("batch_norm_train_gamma", Mode::Train, 1);
  bn_case("batch_norm_train_beta", Mode::Train, 2);
  bn_case("batch_norm_eval_x", Mode::Eval, 0);

  run("cross_entropy_smoothed", [&](Rng& rng) {
    Tensor logits = rand_t({4, 5}, rng, -2, 2);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(5));
    return grad_check("cross_entropy_smoothed", [&](const auto& xs) {
      return cross_entropy_smoothed(xs, labels, 0.1);
    }, logits, tol);
  });

  // --- denoising operations ----------------------------------------------------
  auto denoise_input_case = [&](const std::string& name, DenoiseKind kind,
                                bool subsample, bool distinct) {
    run(name, [&, kind, subsample, distinct](Rng& rng) {
      auto spec = DenoiseBlockSpec::make(kind, 3, 3, subsample);
      auto params = DenoiseBlockParamsT<float>::zeros(spec);
      if (spec.embed) {
        for (auto& v : params.theta_w.data())
          v = static_cast<float>(rng.uniform(-0.5, 0.5));
        for (auto& v : params.phi_w.data())
          v = static_cast<float>(rng.uniform(-0.5, 0.5));
      }
      Tensor x = distinct ? rand_distinct({1, 3, 5, 5}, rng)
                          : rand_t({1, 3, 5, 5}, rng, -1, 1);
      Tensor r = rand_t({1, 3, 5, 5}, rng, -1, 1);
      return grad_check(name, [&](const auto& xs) {
        using S = typename std::decay_t<decltype(xs)>::Scalar;
        auto ps = cast_params<S>(params);
        return reduce(denoise_op(xs, spec, ps), r);
      }, x, tol);
    });
  };
  denoise_input_case("nonlocal_gaussian", DenoiseKind::NonlocalGaussian, false,
                     false);
  denoise_input_case("nonlocal_gaussian_sub", DenoiseKind::NonlocalGaussian,
                     true, true);
  denoise_input_case("nonlocal_dot", DenoiseKind::NonlocalDot, false, false);
  denoise_input_case("nonlocal_dot_sub", DenoiseKind::NonlocalDot, true, true);
  denoise_input_case("bilateral_gaussian", DenoiseKind::BilateralGaussian,
                     false, false);
  denoise_input_case("bilateral_dot", DenoiseKind::BilateralDot, false, false);
  denoise_input_case("mean_filter", DenoiseKind::Mean3x3, false, false);
  denoise_input_case("median_filter", DenoiseKind::Median3x3, false, true);

  // Embedding weights of the Gaussian weightings.
  auto embed_case = [&](const std::string& name, DenoiseKind kind, bool theta) {
    run(name, [&, kind, theta](Rng& rng) {
      auto spec = DenoiseBlockSpec::make(kind, 3);
      auto params = DenoiseBlockParamsT<float>::zeros(spec);
      for (auto& v : params.theta_w.data())
        v = static_cast<float>(rng.uniform(-0.5, 0.5));
      for (auto& v : params.phi_w.data())
        v = static_cast<float>(rng.uniform(-0.5, 0.5));
      Tensor x = rand_t({1, 3, 4, 4}, rng, -1, 1);
      Tensor r = rand_t({1, 3, 4, 4}, rng, -1, 1);
      Tensor probe = theta ? params.theta_w : params.phi_w;
      return grad_check(name, [&](const auto& ws) {
        using S = typename std::decay_t<decltype(ws)>::Scalar;
        auto ps = cast_params<S>(params);
        if (theta) ps.theta_w = ws.view({3, 3, 1, 1});
        else ps.phi_w = ws.view({3, 3, 1, 1});
        return reduce(denoise_op(tensor_cast<S>(x), spec, ps), r);
      }, probe, tol);
    });
  };
  embed_case("nonlocal_gaussian_theta", DenoiseKind::NonlocalGaussian, true);
  embed_case("nonlocal_gaussian_phi", DenoiseKind::NonlocalGaussian, false);
  embed_case("bilateral_gaussian_theta", DenoiseKind::BilateralGaussian, true);
  embed_case("bilateral_gaussian_phi", DenoiseKind::BilateralGaussian, false);

  // Full block composite (random 1x1 so the wrapped path carries gradient).
  run("denoise_block", [&](Rng& rng) {
    auto spec = DenoiseBlockSpec::make(DenoiseKind::NonlocalGaussian, 3);
    auto params = DenoiseBlockParamsT<float>::zeros(spec);
    for (auto& v : params.conv_w.data())
      v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : params.conv_b.data())
      v = static_cast<float>(rng.uniform(-0.2, 0.2));
    for (auto& v : params.theta_w.data())
      v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : params.phi_w.data())
      v = static_cast<float>(rng.uniform(-0.5, 0.5));
    Tensor x = rand_t({1, 3, 4, 4}, rng, -1, 1);
    Tensor r = rand_t({1, 3, 4, 4}, rng, -1, 1);
    return grad_check("denoise_block", [&](const auto& xs) {
      using S = typename std::decay_t<decltype(xs)>::Scalar;
      auto ps = cast_params<S>(params);
      return reduce(denoise_block(xs, spec, ps), r);
    }, x, tol);
  });

  return results;
}

}  // namespace fdn
