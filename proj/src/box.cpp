#include "cft/box.hpp"

namespace cft {

const std::vector<ClassSpec>& default_classes() {
    static const std::vector<ClassSpec> classes = {
        {"car", {4.5, 1.9, 1.6}, {1.0, 0.15, 0.1}},
        {"truck", {7.0, 2.5, 2.8}, {0.1, 1.0, 0.2}},
        {"pedestrian", {0.7, 0.7, 1.7}, {0.15, 0.2, 1.0}},
    };
    return classes;
}

}  // namespace cft
