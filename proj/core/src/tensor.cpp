#include "eapnet/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace eapnet {

std::string Shape4::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

template <typename T>
TensorT<T> TensorT<T>::from(Shape4 s, std::vector<T> values) {
  if (static_cast<int64_t>(values.size()) != s.numel()) {
    std::ostringstream os;
    os << "tensor data length " << values.size() << " does not match shape " << s.str();
    throw std::invalid_argument(os.str());
  }
  TensorT<T> t;
  t.shape = s;
  t.data = std::move(values);
  return t;
}

template struct TensorT<float>;
template struct TensorT<double>;

void ConvSpec::validate(bool require_odd_kernel) const {
  std::ostringstream os;
  if (in_channels <= 0 || out_channels <= 0) {
    os << "conv spec: channels must be positive, got " << in_channels << "->" << out_channels;
    throw std::invalid_argument(os.str());
  }
  if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0 || groups < 1) {
    os << "conv spec: kernel " << kernel << ", stride " << stride << ", dilation " << dilation
       << ", padding " << padding << ", groups " << groups << " out of range";
    throw std::invalid_argument(os.str());
  }
  if (require_odd_kernel && kernel % 2 == 0) {
    os << "conv spec: kernel size must be odd, got " << kernel;
    throw std::invalid_argument(os.str());
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    os << "conv spec: channels " << in_channels << "->" << out_channels
       << " not divisible by groups " << groups;
    throw std::invalid_argument(os.str());
  }
}

ConvSpec depthwise_spec(int channels, int kernel, int stride, int dilation, int padding,
                        bool bias) {
  ConvSpec s;
  s.in_channels = channels;
  s.out_channels = channels;
  s.kernel = kernel;
  s.stride = stride;
  s.dilation = dilation;
  s.padding = padding;
  s.groups = channels;
  s.has_bias = bias;
  return s;
}

ConvSpec pointwise_spec(int in_channels, int out_channels, bool bias) {
  ConvSpec s;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = 1;
  s.has_bias = bias;
  return s;
}

}  // namespace eapnet
