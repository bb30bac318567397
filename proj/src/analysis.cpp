#include "opfrelax/analysis.hpp"
