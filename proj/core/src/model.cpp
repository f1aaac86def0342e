#include "ncconv/model.hpp"

#include "ncconv/group_norm.hpp"

namespace ncconv {

template <typename T>
Model<T>::Model(ModelSpec spec, std::vector<std::unique_ptr<Layer<T>>> layers, Shape output_shape)
    : spec_(std::move(spec)), layers_(std::move(layers)), output_shape_(std::move(output_shape)) {}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x, bool training) {
  Shape expect{x.rank() ? x.dim(0) : 0};
  expect.insert(expect.end(), spec_.input.begin(), spec_.input.end());
  if (x.shape() != expect) {
    throw DimensionError("model input " + to_string(x.shape()) + " expected N x " +
                         to_string(spec_.input));
  }
  Tensor<T> a = x;
  for (auto& l : layers_) a = l->forward(a, training);
  return a;
}

template <typename T>
Tensor<T> Model<T>::backward(const Tensor<T>& grad_output) {
  Tensor<T> g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect_parameters("layer" + std::to_string(i) + ".", out);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value->size();
  return n;
}

template <typename T>
void Model<T>::visit(const std::function<void(const Layer<T>&)>& fn) const {
  for (const auto& l : layers_) l->visit(fn);
}

namespace {

template <typename T>
class Builder {
 public:
  Builder(const ModelSpec& spec, Rng& rng) : spec_(spec), rng_(rng) {}

  std::unique_ptr<Layer<T>> conv(ConvKind kind, Shape& shape, std::size_t out, std::size_t kernel,
                                 std::size_t stride, std::size_t padding) {
    require_image(shape, "convolution");
    ConvGeometry g;
    g.in_channels = shape[0];
    g.in_h = shape[1];
    g.in_w = shape[2];
    g.out_channels = out;
    g.kernel_h = g.kernel_w = kernel;
    g.stride_h = g.stride_w = stride;
    g.pad_h = g.pad_w = padding;
    g.validate();
    shape = {out, g.out_h(), g.out_w()};
    if (kind == ConvKind::Normalized) {
      return std::make_unique<NcConvLayer<T>>(g, rng_, spec_.nc_init,
                                              static_cast<T>(spec_.epsilon));
    }
    return std::make_unique<ConvLayer<T>>(g, rng_, spec_.conv_init);
  }

  std::unique_ptr<Layer<T>> group_norm(const Shape& shape, std::size_t groups) {
    require_image(shape, "group norm");
    const std::size_t g = groups == 0 ? default_group_count(shape[0]) : groups;
    return std::make_unique<GroupNormLayer<T>>(shape[0], g, static_cast<T>(spec_.epsilon));
  }

  std::unique_ptr<Layer<T>> make(const LayerSpec& layer, Shape& shape) {
    return std::visit(
        [&](const auto& l) -> std::unique_ptr<Layer<T>> {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvSpec>) {
            return conv(l.kind, shape, l.out_channels, l.kernel, l.stride, l.padding);
          } else if constexpr (std::is_same_v<L, GroupNormSpec>) {
            return group_norm(shape, l.groups);
          } else if constexpr (std::is_same_v<L, ActivationSpec>) {
            return std::make_unique<ActivationLayer<T>>(l.kind);
          } else if constexpr (std::is_same_v<L, PoolSpec>) {
            require_image(shape, "pooling");
            if (l.global) {
              shape = {shape[0]};
              return std::make_unique<GlobalAvgPoolLayer<T>>();
            }
            if (l.size == 0 || shape[1] < l.size || shape[2] < l.size) {
              throw DimensionError("pool window " + std::to_string(l.size) +
                                   " does not fit input " + to_string(shape));
            }
            shape = {shape[0], shape[1] / l.size, shape[2] / l.size};
            return std::make_unique<AvgPoolLayer<T>>(l.size);
          } else if constexpr (std::is_same_v<L, ResidualSpec>) {
            return residual(l, shape);
          } else {
            const std::size_t features = shape_size(shape);
            if (features == 0 || l.out_features == 0) {
              throw DimensionError("linear layer needs positive in/out features");
            }
            shape = {l.out_features};
            return std::make_unique<LinearLayer<T>>(features, l.out_features, rng_);
          }
        },
        layer);
  }

 private:
  static void require_image(const Shape& shape, const char* what) {
    if (shape.size() != 3) {
      throw DimensionError(std::string(what) + " needs a C x H x W input, got " +
                           to_string(shape));
    }
  }

  std::unique_ptr<Layer<T>> residual(const ResidualSpec& r, Shape& shape) {
    require_image(shape, "residual block");
    const Shape in = shape;
    std::vector<std::unique_ptr<Layer<T>>> main, shortcut;
    Shape s = in;
    main.push_back(conv(r.conv, s, r.out_channels, 3, r.stride, 1));
    if (r.norm == NormKind::GroupNorm) main.push_back(group_norm(s, r.groups));
    main.push_back(std::make_unique<ActivationLayer<T>>(r.activation));
    main.push_back(conv(r.conv, s, r.out_channels, 3, 1, 1));
    if (r.norm == NormKind::GroupNorm) main.push_back(group_norm(s, r.groups));

    if (r.stride != 1 || in[0] != r.out_channels) {
      Shape sc = in;
      shortcut.push_back(conv(ConvKind::Standard, sc, r.out_channels, 1, r.stride, 0));
      if (r.norm == NormKind::GroupNorm) shortcut.push_back(group_norm(sc, r.groups));
      if (sc != s) {
        throw DimensionError("residual branches disagree at the join: " + to_string(s) + " vs " +
                             to_string(sc));
      }
    }
    shape = s;
    return std::make_unique<ResidualLayer<T>>(std::move(main), std::move(shortcut), r.activation);
  }

  const ModelSpec& spec_;
  Rng& rng_;
};

}  // namespace

template <typename T>
Model<T> build_model(const ModelSpec& spec, Rng& rng) {
  if (spec.input.empty() || spec.input.size() > 3 || shape_size(spec.input) == 0) {
    throw ConfigError("model input shape " + to_string(spec.input) + " is not C x H x W");
  }
  Builder<T> builder(spec, rng);
  std::vector<std::unique_ptr<Layer<T>>> layers;
  Shape shape = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    try {
      layers.push_back(builder.make(spec.layers[i], shape));
    } catch (const Error& e) {
      throw ConfigError("model '" + spec.name + "' layer " + std::to_string(i) + " (" +
                        describe(spec.layers[i]) + "): " + e.what());
    }
  }
  return Model<T>(spec, std::move(layers), shape);
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(const ModelSpec&, Rng&);
template Model<double> build_model<double>(const ModelSpec&, Rng&);

}  // namespace ncconv
