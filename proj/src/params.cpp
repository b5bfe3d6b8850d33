#include "fedbnr/params.hpp"

#include "fedbnr/errors.hpp"

namespace fedbnr {

ParamLayout::ParamLayout(std::vector<ParamSpec> segments)
    : segments_(std::move(segments)) {
  offsets_.reserve(segments_.size());
  for (const auto& s : segments_) {
    offsets_.push_back(total_);
    total_ += s.size();
  }
}

int ParamLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

ParamVector ParamVector::zeros(LayoutPtr layout) {
  ParamVector p;
  p.data = Vector::Zero(layout->total_size());
  p.layout = std::move(layout);
  return p;
}

Matrix ParamVector::segment(std::size_t i) const {
  const auto& s = layout->spec(i);
  return Eigen::Map<const Matrix>(data.data() + layout->offset(i), s.rows,
                                  s.cols);
}

Matrix ParamVector::segment(const std::string& name) const {
  const int i = layout->find(name);
  if (i < 0) throw LayoutMismatch("unknown parameter segment: " + name);
  return segment(static_cast<std::size_t>(i));
}

void ParamVector::set_segment(std::size_t i, const Matrix& value) {
  const auto& s = layout->spec(i);
  if (value.rows() != s.rows || value.cols() != s.cols) {
    throw LayoutMismatch("segment " + s.name + " shape mismatch");
  }
  Eigen::Map<Matrix>(data.data() + layout->offset(i), s.rows, s.cols) = value;
}

void ParamVector::set_segment(const std::string& name, const Matrix& value) {
  const int i = layout->find(name);
  if (i < 0) throw LayoutMismatch("unknown parameter segment: " + name);
  set_segment(static_cast<std::size_t>(i), value);
}

double ParamVector::scalar(const std::string& name) const {
  const int i = layout->find(name);
  if (i < 0) throw LayoutMismatch("unknown parameter segment: " + name);
  return data[layout->offset(static_cast<std::size_t>(i))];
}

void ParamVector::set_scalar(const std::string& name, double value) {
  const int i = layout->find(name);
  if (i < 0) throw LayoutMismatch("unknown parameter segment: " + name);
  data[layout->offset(static_cast<std::size_t>(i))] = value;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  return layout && other.layout &&
         (layout == other.layout || *layout == *other.layout);
}

ParamVector mean_params(const std::vector<ParamVector>& items,
                        const std::vector<double>* weights) {
  if (items.empty()) throw LayoutMismatch("mean_params: no updates");
  for (const auto& p : items) {
    if (!p.same_layout(items.front())) {
      throw LayoutMismatch("mean_params: inconsistent parameter layouts");
    }
  }
  if (weights && weights->size() != items.size()) {
    throw LayoutMismatch("mean_params: weight count mismatch");
  }

  long double wsum = 0.0L;
  if (weights) {
    for (double w : *weights) wsum += static_cast<long double>(w);
  } else {
    wsum = static_cast<long double>(items.size());
  }

  ParamVector out = items.front();
  for (Eigen::Index j = 0; j < out.data.size(); ++j) {
    long double acc = 0.0L;
    for (std::size_t c = 0; c < items.size(); ++c) {
      const long double w =
          weights ? static_cast<long double>((*weights)[c]) : 1.0L;
      acc += w * static_cast<long double>(items[c].data[j]);
    }
    out.data[j] = static_cast<double>(acc / wsum);
  }
  return out;
}

}  // namespace fedbnr
